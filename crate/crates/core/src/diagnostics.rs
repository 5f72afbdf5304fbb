//! Energy ledger, positivity census and the trace/determinant check.

use rayon::prelude::*;

use crate::algebra::CoherenceMatrix;
use crate::geometry::{BoundaryClass, BoundaryQuadrature, PhaseGrid};
use crate::solver::{advect_generic, Scenario, Solver, SolverConfig, SolverError};

const CHUNK: usize = 4096;

/// Sum of `f(0..n)` with a fixed chunking, independent of the thread count.
pub fn fixed_sum(n: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    let partial: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let hi = ((c + 1) * CHUNK).min(n);
            let mut s = 0.0;
            for i in c * CHUNK..hi {
                s += f(i);
            }
            s
        })
        .collect();
    partial.iter().sum()
}

/// [`fixed_sum`] for several sums sharing one traversal.
pub fn fixed_sum_n<const N: usize>(n: usize, f: impl Fn(usize) -> [f64; N] + Sync) -> [f64; N] {
    let partial: Vec<[f64; N]> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let hi = ((c + 1) * CHUNK).min(n);
            let mut s = [0.0; N];
            for i in c * CHUNK..hi {
                let v = f(i);
                for j in 0..N {
                    s[j] += v[j];
                }
            }
            s
        })
        .collect();
    let mut out = [0.0; N];
    for s in &partial {
        for j in 0..N {
            out[j] += s[j];
        }
    }
    out
}

/// `Σ w ‖W‖_{S^p}^p` over the grid.
pub fn lp_norm_pow(grid: &PhaseGrid, field: &[CoherenceMatrix], p: f64) -> f64 {
    fixed_sum(field.len(), |i| grid.weight(i) * field[i].schatten_pow(p))
}

/// `‖W‖_{L^p}` for `p ∈ [1, ∞)`.
pub fn lp_norm(grid: &PhaseGrid, field: &[CoherenceMatrix], p: f64) -> f64 {
    assert!(p >= 1.0 && p.is_finite(), "L^p norm needs 1 ≤ p < ∞");
    lp_norm_pow(grid, field, p).powf(1.0 / p)
}

/// `∫_{Γ_side} ‖W‖_p^p |∇_kH·n| dΓ` with one value per quadrature point.
pub fn boundary_flux(bq: &BoundaryQuadrature, values: &[CoherenceMatrix], p: f64, side: BoundaryClass) -> f64 {
    assert_eq!(values.len(), bq.points.len());
    fixed_sum(values.len(), |i| {
        let pt = &bq.points[i];
        if pt.class == side {
            pt.weight() * values[i].schatten_pow(p)
        } else {
            0.0
        }
    })
}

/// One step of the energy ledger; vectors are indexed like [`EnergyLedger::exponents`].
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub step: usize,
    pub time: f64,
    /// `‖W(t)‖_p^p` at the end of the step.
    pub bulk: Vec<f64>,
    /// Inflow integrated over the step.
    pub inflow: Vec<f64>,
    /// Outflow integrated over the step.
    pub outflow: Vec<f64>,
    /// `dt·∫Tr[F·W|W|^{p−2}]`.
    pub source_work: Vec<f64>,
    /// `p·dt·‖F‖_p·max(‖W‖_p)^{p−1}` over the injection.
    pub source_bound: Vec<f64>,
    /// `∫Tr[(S(W) − ΣW)W|W|^{p−2}]` at the start of the step.
    pub scatter_defect: Vec<f64>,
    pub min_eig: f64,
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    pub exponents: Vec<f64>,
    pub initial: Vec<f64>,
    pub initial_time: f64,
    pub entries: Vec<LedgerEntry>,
}

/// Guard for relative residuals of zero-data runs.
pub const EPS_FLOOR: f64 = 1e-300;

impl EnergyLedger {
    pub fn new(exponents: Vec<f64>, initial: Vec<f64>, initial_time: f64) -> Self {
        EnergyLedger { exponents, initial, initial_time, entries: Vec::new() }
    }

    fn index(&self, p: f64) -> Option<usize> {
        self.exponents.iter().position(|e| *e == p)
    }

    /// `(t, |‖W(t)‖^p + ∫out − ‖W(0)‖^p − ∫in| / max(‖W(0)‖^p, ε))` per step.
    pub fn conservation_residuals(&self, p: f64) -> Vec<(f64, f64)> {
        let Some(j) = self.index(p) else { return Vec::new() };
        let b0 = self.initial[j];
        let (mut cin, mut cout) = (0.0, 0.0);
        self.entries
            .iter()
            .map(|e| {
                cin += e.inflow[j];
                cout += e.outflow[j];
                (e.time, (e.bulk[j] + cout - b0 - cin).abs() / b0.max(EPS_FLOOR))
            })
            .collect()
    }

    /// Signed conservation defect without the absolute value, relative to the initial energy.
    pub fn signed_balance(&self, p: f64) -> Vec<(f64, f64)> {
        let Some(j) = self.index(p) else { return Vec::new() };
        let b0 = self.initial[j];
        let (mut cin, mut cout) = (0.0, 0.0);
        self.entries
            .iter()
            .map(|e| {
                cin += e.inflow[j];
                cout += e.outflow[j];
                (e.time, (e.bulk[j] + cout - b0 - cin) / b0.max(EPS_FLOOR))
            })
            .collect()
    }

    /// `(t, ‖W(0)‖^p + ∫in + ∫source bound − ‖W(t)‖^p − ∫out)` per step.
    pub fn dissipation_margins(&self, p: f64) -> Vec<(f64, f64)> {
        let Some(j) = self.index(p) else { return Vec::new() };
        let b0 = self.initial[j];
        let (mut cin, mut cout, mut csrc) = (0.0, 0.0, 0.0);
        self.entries
            .iter()
            .map(|e| {
                cin += e.inflow[j];
                cout += e.outflow[j];
                csrc += e.source_bound[j];
                (e.time, b0 + cin + csrc - e.bulk[j] - cout)
            })
            .collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.entries.iter().map(|e| e.min_eig).fold(f64::INFINITY, f64::min)
    }

    /// CSV time series, one row per step.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "t".to_string()];
        for p in &self.exponents {
            for name in [
                "bulk_norm",
                "inflow",
                "outflow",
                "source_work",
                "source_bound",
                "scatter_defect",
                "conservation_residual",
                "dissipation_margin",
            ] {
                header.push(format!("{name}_p{p}"));
            }
        }
        header.push("min_eig".into());
        header.push("clamped_stencils".into());
        w.write_record(&header)?;
        let cons: Vec<Vec<(f64, f64)>> = self.exponents.iter().map(|p| self.conservation_residuals(*p)).collect();
        let marg: Vec<Vec<(f64, f64)>> = self.exponents.iter().map(|p| self.dissipation_margins(*p)).collect();
        for (n, e) in self.entries.iter().enumerate() {
            let mut row = vec![e.step.to_string(), format!("{:.17e}", e.time)];
            for j in 0..self.exponents.len() {
                for v in [
                    e.bulk[j],
                    e.inflow[j],
                    e.outflow[j],
                    e.source_work[j],
                    e.source_bound[j],
                    e.scatter_defect[j],
                    cons[j][n].1,
                    marg[j][n].1,
                ] {
                    row.push(format!("{v:.17e}"));
                }
            }
            row.push(format!("{:.17e}", e.min_eig));
            row.push(e.clamped.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Smallest eigenvalue over all nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivityCensus {
    pub min_eig: f64,
    pub argmin: usize,
    /// Nodes below `−pos_tol`.
    pub below_tol: usize,
    /// Nodes below `−100·pos_tol`.
    pub below_hard: usize,
}

pub fn positivity_monitor(field: &[CoherenceMatrix], pos_tol: f64) -> PositivityCensus {
    let mut c = PositivityCensus { min_eig: f64::INFINITY, argmin: 0, below_tol: 0, below_hard: 0 };
    for (i, w) in field.iter().enumerate() {
        let l = w.min_eigenvalue();
        if l < c.min_eig {
            c.min_eig = l;
            c.argmin = i;
        }
        if l < -pos_tol {
            c.below_tol += 1;
        }
        if l < -100.0 * pos_tol {
            c.below_hard += 1;
        }
    }
    c
}

/// Comparison of `Tr V`, `det V` with independent scalar runs.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceDetReport {
    /// `(t, relative L² error of Tr V, relative L² error of det V)` per step.
    pub series: Vec<(f64, f64, f64)>,
    /// Relative L² errors at the final time.
    pub trace_rel_l2: f64,
    pub det_rel_l2: f64,
    /// Minimum over steps and nodes of `Tr V` and of the scalar trace run.
    pub min_trace: f64,
    /// Minimum over steps and nodes of `det V` and of the scalar determinant run.
    pub min_det: f64,
}

/// `(Σ w (a − b)², Σ w b²)`.
fn l2_parts(grid: &PhaseGrid, a: &[f64], b: &[f64]) -> (f64, f64) {
    let num = fixed_sum(a.len(), |i| grid.weight(i) * (a[i] - b[i]).powi(2));
    let den = fixed_sum(a.len(), |i| grid.weight(i) * b[i].powi(2));
    (num, den)
}

fn rel((num, den): (f64, f64)) -> f64 {
    if den <= EPS_FLOOR {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Runs the matrix problem (no scattering) alongside scalar runs for
/// `Tr V` (decay `Σ`) and `det V` (decay `2Σ`).
pub fn trace_det_monitor(scenario: &Scenario, cfg: &SolverConfig, t_final: f64) -> Result<TraceDetReport, SolverError> {
    if scenario.scattering.is_some() {
        return Err(SolverError::InvalidScenario("trace/determinant check needs scattering off".into()));
    }
    let solver = Solver::new(scenario, cfg.clone())?;
    let mut state = solver.initial_state();
    let grid = &scenario.grid;
    let mut tr: Vec<f64> = state.field.iter().map(|w| w.trace()).collect();
    let mut dt_field: Vec<f64> = state.field.iter().map(|w| w.det()).collect();
    let boundary = scenario.boundary.clone();
    let tr_bc = |p: &crate::flow::PhasePoint, t: f64| boundary.as_ref().map_or(0.0, |g| g.value(p, t).trace());
    let det_bc = |p: &crate::flow::PhasePoint, t: f64| boundary.as_ref().map_or(0.0, |g| g.value(p, t).det());
    let mut series = Vec::new();
    let mut min_trace = tr.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut min_det = dt_field.iter().cloned().fold(f64::INFINITY, f64::min);
    let steps = solver.step_plan(t_final);
    for dt in steps {
        let t0 = state.time;
        solver.step(&mut state, dt)?;
        let m = cfg.substeps;
        let h = dt / m as f64;
        for sub in 0..m {
            let ts = t0 + sub as f64 * h;
            if let Some(sig) = &scenario.absorption {
                let ns = grid.n_shells();
                let nd = grid.n_directions();
                tr.par_chunks_mut(ns * nd).zip(dt_field.par_chunks_mut(ns * nd)).enumerate().for_each(|(s, (a, b))| {
                    for r in 0..ns {
                        let e = (-h * sig.value(s, r)).exp();
                        for d in 0..nd {
                            a[r * nd + d] *= e;
                            b[r * nd + d] *= e * e;
                        }
                    }
                });
            }
            let (a, _) = advect_generic(scenario, &solver.trace_params(), &tr, ts, h, &tr_bc, cfg.order);
            let (b, _) = advect_generic(scenario, &solver.trace_params(), &dt_field, ts, h, &det_bc, cfg.order);
            tr = a;
            dt_field = b;
        }
        let mt: Vec<f64> = state.field.iter().map(|w| w.trace()).collect();
        let md: Vec<f64> = state.field.iter().map(|w| w.det()).collect();
        let et = l2_parts(grid, &mt, &tr);
        let ed = l2_parts(grid, &md, &dt_field);
        series.push((state.time, rel(et), rel(ed)));
        for v in mt.iter().chain(tr.iter()) {
            min_trace = min_trace.min(*v);
        }
        for v in md.iter().chain(dt_field.iter()) {
            min_det = min_det.min(*v);
        }
    }
    let (trace_rel_l2, det_rel_l2) = series.last().map_or((0.0, 0.0), |s| (s.1, s.2));
    Ok(TraceDetReport { series, trace_rel_l2, det_rel_l2, min_trace, min_det })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn census_of_rank_one_state() {
        let f = vec![CoherenceMatrix::new(2.0, 1.0, 1.0, 2f64.sqrt()), CoherenceMatrix::new(1.0, 0.0, 0.0, 0.0)];
        let c = positivity_monitor(&f, 1e-10);
        assert!(c.min_eig.abs() < 1e-15);
        assert_eq!(c.below_tol, 0);
    }

    #[test]
    fn fixed_sum_matches_serial() {
        let n = 10_000;
        let s = fixed_sum(n, |i| i as f64);
        assert_eq!(s, (n * (n - 1) / 2) as f64);
    }
}

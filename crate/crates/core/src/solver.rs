//! Semi-Lagrangian transport with Trotter-split local physics.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::algebra::CoherenceMatrix;
use crate::diagnostics::{fixed_sum, lp_norm_pow, positivity_monitor, EnergyLedger, LedgerEntry};
use crate::fields::PhaseData;
use crate::flow::{heaviside, FlowConfig, FlowError, Integrator, PhasePoint, VelocityField};
use crate::geometry::{
    boundary_quadrature, default_horizon, trace_in_domain, BoundaryClass, BoundaryQuadrature, FieldValue,
    GeometryError, InterpolationOrder, PhaseGrid, Sense, SpatialDomain, TraceOutcome,
};
use crate::operators::{
    dissipativity_pairing_from, rotate_qu, AbsorptionField, AbsorptionSource, CouplingField, OperatorError,
    ScatteringOperator,
};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("CFL violation: ν_max·dt/h = {cfl:.3} exceeds limit {limit}")]
    Cfl { cfl: f64, limit: f64 },
    #[error("boundary data must vanish at t = 0 (max |G(0)| = {0:.3e})")]
    Compatibility(f64),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("invariant breach at step {step} (t = {time}): {what}")]
    InvariantBreach { step: usize, time: f64, what: String },
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Everything that defines a run apart from numerical parameters.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub velocity: VelocityField,
    pub grid: PhaseGrid,
    pub coupling: Option<CouplingField>,
    pub scattering: Option<ScatteringOperator>,
    pub absorption: Option<AbsorptionField>,
    pub initial: Option<Arc<dyn PhaseData>>,
    pub source: Option<Arc<dyn PhaseData>>,
    pub boundary: Option<Arc<dyn PhaseData>>,
}

impl Scenario {
    /// Pure transport with zero data.
    pub fn new(grid: PhaseGrid, velocity: VelocityField) -> Self {
        Scenario {
            velocity,
            grid,
            coupling: None,
            scattering: None,
            absorption: None,
            initial: None,
            source: None,
            boundary: None,
        }
    }

    pub fn domain(&self) -> &SpatialDomain {
        &self.grid.domain
    }

    pub fn with_coupling(mut self, n: CouplingField) -> Self {
        self.coupling = Some(n);
        self
    }

    /// Installs `S` and the absorption derived from it.
    pub fn with_scattering(mut self, op: ScatteringOperator) -> Self {
        self.absorption = Some(op.absorption_field());
        self.scattering = Some(op);
        self
    }

    /// User-supplied absorption; only allowed without scattering.
    pub fn with_absorption(mut self, a: AbsorptionField) -> Self {
        self.absorption = Some(a);
        self
    }

    pub fn with_initial(mut self, d: Arc<dyn PhaseData>) -> Self {
        self.initial = Some(d);
        self
    }

    pub fn with_source(mut self, d: Arc<dyn PhaseData>) -> Self {
        self.source = Some(d);
        self
    }

    pub fn with_boundary(mut self, d: Arc<dyn PhaseData>) -> Self {
        self.boundary = Some(d);
        self
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if let (Some(_), Some(a)) = (&self.scattering, &self.absorption) {
            if a.source == AbsorptionSource::UserSupplied {
                return Err(SolverError::InvalidScenario(
                    "user-supplied absorption cannot be combined with scattering".into(),
                ));
            }
        }
        if let Some(op) = &self.scattering {
            op.check_admissible()?;
            if op.n_directions() != self.grid.n_directions() {
                return Err(OperatorError::ShellMismatch { expected: self.grid.n_directions(), got: op.n_directions() }.into());
            }
        }
        Ok(())
    }
}

/// Step control for characteristic tracing inside the solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceParams {
    pub h_max: f64,
    pub integrator: Integrator,
    pub event_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub substeps: usize,
    pub order: InterpolationOrder,
    pub positivity: bool,
    pub pos_tol: f64,
    /// Largest admissible `ν_max·(dt/m)/h_min`.
    pub cfl_limit: f64,
    pub ledger_exponents: Vec<f64>,
    pub strict: bool,
    pub flow: FlowConfig,
    /// Surface resolution of the ledger quadrature; defaults to the lattice cell count.
    pub surface_resolution: Option<usize>,
    /// Breach threshold for the dissipation margin, relative to the initial energy.
    pub dissipation_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 0.05,
            substeps: 1,
            order: InterpolationOrder::Linear,
            positivity: true,
            pos_tol: 1e-10,
            cfl_limit: 2.0,
            ledger_exponents: vec![2.0],
            strict: false,
            flow: FlowConfig::default(),
            surface_resolution: None,
            dissipation_tol: 1e-3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SolverError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.substeps == 0 {
            return Err(SolverError::InvalidConfig("trotter_substeps must be at least 1".into()));
        }
        if !(self.pos_tol >= 0.0) {
            return Err(SolverError::InvalidConfig("pos_tol must be nonnegative".into()));
        }
        if !(self.cfl_limit > 0.0) {
            return Err(SolverError::InvalidConfig("cfl limit must be positive".into()));
        }
        if self.ledger_exponents.iter().any(|p| !(*p >= 1.0 && p.is_finite())) {
            return Err(SolverError::InvalidConfig("ledger exponents must lie in [1, ∞)".into()));
        }
        self.flow.validate()?;
        Ok(())
    }
}

/// Counters accumulated by the transport stage.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AdvectStats {
    pub clamped: usize,
    pub exits: usize,
    pub near_edge: usize,
    pub grazing: usize,
}

impl AdvectStats {
    fn merge(self, o: Self) -> Self {
        AdvectStats {
            clamped: self.clamped + o.clamped,
            exits: self.exits + o.exits,
            near_edge: self.near_edge + o.near_edge,
            grazing: self.grazing + o.grazing,
        }
    }
}

/// Field on the grid with time and ledger.
#[derive(Debug, Clone)]
pub struct SimulationState {
    pub field: Vec<CoherenceMatrix>,
    pub time: f64,
    pub step: usize,
    pub ledger: EnergyLedger,
    pub stats: AdvectStats,
    pub positivity_warnings: usize,
}

/// One backward transport step of length `dt` for any interpolable value type.
///
/// Nodes whose characteristic leaves the domain at backward time `τ < dt`
/// take the boundary value `bc(exit, t + dt − τ)`.
pub fn advect_generic<T: FieldValue>(
    scenario: &Scenario,
    tp: &TraceParams,
    old: &[T],
    t_old: f64,
    dt: f64,
    bc: &(dyn Fn(&PhasePoint, f64) -> T + Sync),
    order: InterpolationOrder,
) -> (Vec<T>, AdvectStats) {
    let grid = &scenario.grid;
    let m = &grid.momentum;
    let (ns, nd) = (grid.n_shells(), grid.n_directions());
    let dirs = m.directions();
    let radii = m.radii();
    let domain = scenario.domain();
    let vf = &scenario.velocity;
    let mut out = vec![T::default(); old.len()];
    let stats = out
        .par_chunks_mut(ns * nd)
        .enumerate()
        .map(|(s, chunk)| {
            let x = grid.lattice.position(s);
            let mut st = AdvectStats::default();
            for d in 0..nd {
                let unit = PhasePoint::new(x, dirs[d]);
                match trace_in_domain(domain, vf, &unit, dt, Sense::Backward, tp.h_max, tp.integrator, tp.event_tol) {
                    TraceOutcome::Inside(q) => {
                        let sten = grid.lattice.stencil(&q.x, order);
                        st.clamped += sten.clamped as usize;
                        let (ds, ndd) = m.direction_stencil(&q.k);
                        let kq = q.k.norm();
                        for r in 0..ns {
                            let (sh, nsh) = m.shell_stencil(radii[r] * kq);
                            chunk[r * nd + d] = grid.interpolate_parts(old, &sten, &sh[..nsh], &ds[..ndd]);
                        }
                    }
                    TraceOutcome::Exited { time, exit, flags } => {
                        st.exits += 1;
                        st.near_edge += flags.near_edge as usize;
                        st.grazing += flags.grazing as usize;
                        let tb = t_old + dt - time;
                        let on_edge = (dt - time).abs() <= tp.event_tol;
                        for r in 0..ns {
                            let pe = PhasePoint::new(exit.x, exit.k * radii[r]);
                            let mut v = bc(&pe, tb);
                            if on_edge {
                                // Y(0) = ½: average the two one-sided limits
                                let (inner, _) = grid.interpolate(old, &pe, order);
                                v = (v + inner) * 0.5;
                            }
                            chunk[r * nd + d] = v;
                        }
                    }
                }
            }
            st
        })
        .reduce(AdvectStats::default, AdvectStats::merge);
    (out, stats)
}

/// Drives a [`Scenario`] forward in time.
pub struct Solver<'a> {
    scenario: &'a Scenario,
    cfg: SolverConfig,
    bq: BoundaryQuadrature,
    tp: TraceParams,
}

impl<'a> Solver<'a> {
    pub fn new(scenario: &'a Scenario, cfg: SolverConfig) -> Result<Self, SolverError> {
        cfg.validate()?;
        scenario.validate()?;
        let grid = &scenario.grid;
        let res = cfg.surface_resolution.unwrap_or(grid.lattice.cells()[0]);
        let bq = boundary_quadrature(scenario.domain(), &scenario.velocity, &grid.momentum, res)?;
        let h_min = grid.lattice.min_spacing();
        let tp = TraceParams {
            h_max: h_min / scenario.velocity.nu_max(),
            integrator: cfg.flow.integrator,
            event_tol: cfg.flow.event_tol,
        };
        let solver = Solver { scenario, cfg, bq, tp };
        solver.check_data()?;
        Ok(solver)
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn boundary_quadrature(&self) -> &BoundaryQuadrature {
        &self.bq
    }

    pub fn trace_params(&self) -> TraceParams {
        self.tp
    }

    /// Compatibility `G(0) = 0` and, in positivity mode, `W₀, F, G ⪰ 0` at the nodes.
    fn check_data(&self) -> Result<(), SolverError> {
        let sc = self.scenario;
        if let Some(g) = &sc.boundary {
            let worst = self
                .bq
                .points_on(BoundaryClass::Inflow)
                .map(|p| g.value(&p.phase_point(), 0.0).max_abs())
                .fold(0.0, f64::max);
            if worst > 1e-12 {
                return Err(SolverError::Compatibility(worst));
            }
        }
        if self.cfg.positivity {
            let grid = &sc.grid;
            let tol = self.cfg.pos_tol;
            for (name, d) in [("initial", &sc.initial), ("source", &sc.source), ("boundary", &sc.boundary)] {
                let Some(d) = d else { continue };
                if d.is_positive() {
                    continue;
                }
                let probe_t = [0.0, 0.5, 1.0];
                let bad = (0..grid.n_nodes()).step_by(7).any(|n| {
                    let p = grid.phase_point(n);
                    probe_t.iter().any(|t| d.value(&p, *t).min_eigenvalue() < -tol)
                });
                if bad {
                    return Err(SolverError::InvalidScenario(format!("{name} data is not positive semidefinite")));
                }
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> SimulationState {
        let grid = &self.scenario.grid;
        let field: Vec<CoherenceMatrix> = match &self.scenario.initial {
            Some(d) => (0..grid.n_nodes()).into_par_iter().map(|n| d.value(&grid.phase_point(n), 0.0)).collect(),
            None => vec![CoherenceMatrix::ZERO; grid.n_nodes()],
        };
        let initial = self.cfg.ledger_exponents.iter().map(|p| lp_norm_pow(grid, &field, *p)).collect();
        SimulationState {
            field,
            time: 0.0,
            step: 0,
            ledger: EnergyLedger::new(self.cfg.ledger_exponents.clone(), initial, 0.0),
            stats: AdvectStats::default(),
            positivity_warnings: 0,
        }
    }

    /// Step sizes reaching `t_final` exactly.
    pub fn step_plan(&self, t_final: f64) -> Vec<f64> {
        if t_final <= 0.0 {
            return Vec::new();
        }
        let dt = self.cfg.dt;
        let n = ((t_final / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let mut v = vec![dt; n];
        v[n - 1] = t_final - dt * (n - 1) as f64;
        v
    }

    fn cfl(&self, h: f64) -> f64 {
        self.scenario.velocity.nu_max() * h / self.scenario.grid.lattice.min_spacing()
    }

    fn boundary_value(&self, p: &PhasePoint, t: f64) -> CoherenceMatrix {
        match &self.scenario.boundary {
            Some(g) => g.value(p, t),
            None => CoherenceMatrix::ZERO,
        }
    }

    /// `e^{−hΣ}`, then `I + hS + h²S²/2`, then `e^{hN}`; returns `S(W)` at entry when scattering is on.
    fn local_operators(&self, field: &mut [CoherenceMatrix], h: f64) -> Option<(Vec<CoherenceMatrix>, Vec<CoherenceMatrix>)> {
        let sc = self.scenario;
        let grid = &sc.grid;
        let (ns, nd) = (grid.n_shells(), grid.n_directions());
        let mut pairing = None;
        if let Some(sig) = &sc.absorption {
            field.par_chunks_mut(ns * nd).enumerate().for_each(|(s, c)| {
                for r in 0..ns {
                    let e = (-h * sig.value(s, r)).exp();
                    for w in &mut c[r * nd..(r + 1) * nd] {
                        *w = w.scale(e);
                    }
                }
            });
        }
        if let Some(op) = &sc.scattering {
            let before = field.to_vec();
            let s1 = op.apply(grid, field);
            let s2 = op.apply(grid, &s1);
            field.par_iter_mut().zip(s1.par_iter().zip(s2.par_iter())).for_each(|(w, (a, b))| {
                *w = *w + *a * h + *b * (0.5 * h * h);
            });
            pairing = Some((before, s1));
        }
        if let Some(nf) = &sc.coupling {
            field.par_iter_mut().enumerate().for_each(|(n, w)| {
                let p = grid.phase_point(n);
                *w = rotate_qu(w, 2.0 * h * nf.value(&p));
            });
        }
        pairing
    }

    /// Values on the ledger quadrature at time `t + h/2` given the field at `t`.
    fn boundary_midpoint_values(&self, field: &[CoherenceMatrix], t: f64, h: f64) -> Vec<CoherenceMatrix> {
        let sc = self.scenario;
        let grid = &sc.grid;
        let bq = &self.bq;
        let (nsh, nd) = (bq.n_shells(), bq.n_directions());
        let radii = grid.momentum.radii();
        let tm = t + 0.5 * h;
        let mut out = vec![CoherenceMatrix::ZERO; bq.points.len()];
        out.par_chunks_mut(nsh * nd).enumerate().for_each(|(si, chunk)| {
            let sn = &bq.surface[si];
            for d in 0..nd {
                let first = &bq.points[bq.index(si, 0, d)];
                match first.class {
                    BoundaryClass::Tangential => {}
                    BoundaryClass::Inflow => {
                        for r in 0..nsh {
                            let pt = &bq.points[bq.index(si, r, d)];
                            chunk[r * nd + d] = self.boundary_value(&pt.phase_point(), tm);
                        }
                    }
                    BoundaryClass::Outflow => {
                        let unit = PhasePoint::new(sn.x, first.k / first.k.norm());
                        let tp = &self.tp;
                        match trace_in_domain(sc.domain(), &sc.velocity, &unit, 0.5 * h, Sense::Backward, tp.h_max, tp.integrator, tp.event_tol) {
                            TraceOutcome::Inside(q) => {
                                for r in 0..nsh {
                                    let pq = PhasePoint::new(q.x, q.k * radii[r]);
                                    chunk[r * nd + d] = grid.interpolate(field, &pq, self.cfg.order).0;
                                }
                            }
                            TraceOutcome::Exited { time, exit, .. } => {
                                for r in 0..nsh {
                                    let pe = PhasePoint::new(exit.x, exit.k * radii[r]);
                                    chunk[r * nd + d] = self.boundary_value(&pe, tm - time);
                                }
                            }
                        }
                    }
                }
            }
        });
        out
    }

    /// Midpoint source `Y(τ₋ − dt/2)·F(φ_{−dt/2}, t + dt/2)` at every node.
    fn source_midpoint(&self, src: &dyn PhaseData, t: f64, dt: f64) -> Vec<CoherenceMatrix> {
        let sc = self.scenario;
        let grid = &sc.grid;
        let (ns, nd) = (grid.n_shells(), grid.n_directions());
        let dirs = grid.momentum.directions();
        let radii = grid.momentum.radii();
        let tm = t + 0.5 * dt;
        let tp = &self.tp;
        let mut out = vec![CoherenceMatrix::ZERO; grid.n_nodes()];
        out.par_chunks_mut(ns * nd).enumerate().for_each(|(s, chunk)| {
            let x = grid.lattice.position(s);
            for d in 0..nd {
                let unit = PhasePoint::new(x, dirs[d]);
                let (q, y) = match trace_in_domain(sc.domain(), &sc.velocity, &unit, 0.5 * dt, Sense::Backward, tp.h_max, tp.integrator, tp.event_tol) {
                    TraceOutcome::Inside(q) => (q, 1.0),
                    TraceOutcome::Exited { time, exit, .. } => (exit, heaviside(time - 0.5 * dt, tp.event_tol)),
                };
                if y == 0.0 {
                    continue;
                }
                for r in 0..ns {
                    chunk[r * nd + d] = src.value(&PhasePoint::new(q.x, q.k * radii[r]), tm).scale(y);
                }
            }
        });
        out
    }

    /// Advances `state` by one step of length `dt`.
    pub fn step(&self, state: &mut SimulationState, dt: f64) -> Result<(), SolverError> {
        let m = self.cfg.substeps;
        let h = dt / m as f64;
        let cfl = self.cfl(h);
        if cfl > self.cfg.cfl_limit * (1.0 + 1e-12) {
            return Err(SolverError::Cfl { cfl, limit: self.cfg.cfl_limit });
        }
        let sc = self.scenario;
        let grid = &sc.grid;
        let exps = self.cfg.ledger_exponents.clone();
        let np = exps.len();
        let mut inflow = vec![0.0; np];
        let mut outflow = vec![0.0; np];
        let mut scatter_defect = vec![0.0; np];
        let t0 = state.time;
        let mut field = std::mem::take(&mut state.field);
        let mut stats = AdvectStats::default();
        for sub in 0..m {
            let ts = t0 + sub as f64 * h;
            if let Some((before, s1)) = self.local_operators(&mut field, h) {
                if sub == 0 {
                    let op = sc.scattering.as_ref().expect("scattering present");
                    for (j, p) in exps.iter().enumerate() {
                        scatter_defect[j] = dissipativity_pairing_from(op, grid, &before, &s1, *p);
                    }
                }
            }
            let bvals = self.boundary_midpoint_values(&field, ts, h);
            for (j, p) in exps.iter().enumerate() {
                inflow[j] += h * crate::diagnostics::boundary_flux(&self.bq, &bvals, *p, BoundaryClass::Inflow);
                outflow[j] += h * crate::diagnostics::boundary_flux(&self.bq, &bvals, *p, BoundaryClass::Outflow);
            }
            let bc = |p: &PhasePoint, t: f64| self.boundary_value(p, t);
            let (next, st) = advect_generic(sc, &self.tp, &field, ts, h, &bc, self.cfg.order);
            field = next;
            stats = stats.merge(st);
        }
        let mut source_work = vec![0.0; np];
        let mut source_bound = vec![0.0; np];
        if let Some(src) = &sc.source {
            let f = self.source_midpoint(src.as_ref(), t0, dt);
            let before: Vec<f64> = exps.iter().map(|p| lp_norm_pow(grid, &field, *p)).collect();
            for (j, p) in exps.iter().enumerate() {
                source_work[j] = dt * fixed_sum(field.len(), |i| grid.weight(i) * f[i].trace_product(&field[i].duality_power(*p)));
            }
            field.par_iter_mut().zip(f.par_iter()).for_each(|(w, fi)| *w = *w + *fi * dt);
            for (j, p) in exps.iter().enumerate() {
                let fnorm = lp_norm_pow(grid, &f, *p).powf(1.0 / p);
                let after = lp_norm_pow(grid, &field, *p);
                let wmax = before[j].max(after).powf(1.0 / p);
                source_bound[j] = p * dt * fnorm * wmax.powf(p - 1.0);
            }
        }
        state.field = field;
        state.time = t0 + dt;
        state.step += 1;
        state.stats = state.stats.merge(stats);
        let census = positivity_monitor(&state.field, self.cfg.pos_tol);
        let bulk: Vec<f64> = exps.iter().map(|p| lp_norm_pow(grid, &state.field, *p)).collect();
        state.ledger.entries.push(LedgerEntry {
            step: state.step,
            time: state.time,
            bulk,
            inflow,
            outflow,
            source_work,
            source_bound,
            scatter_defect,
            min_eig: census.min_eig,
            clamped: stats.clamped,
        });
        if census.below_tol > 0 && self.cfg.positivity {
            state.positivity_warnings += 1;
            log::warn!(
                "step {}: {} nodes below −pos_tol (min eigenvalue {:.3e})",
                state.step,
                census.below_tol,
                census.min_eig
            );
        }
        if stats.clamped > 0 {
            log::debug!("step {}: {} clamped interpolation stencils", state.step, stats.clamped);
        }
        self.monitor(state, census.below_hard)
    }

    fn monitor(&self, state: &SimulationState, below_hard: usize) -> Result<(), SolverError> {
        if !self.cfg.strict {
            return Ok(());
        }
        let breach = |what: String| Err(SolverError::InvariantBreach { step: state.step, time: state.time, what });
        if state.field.iter().any(|w| !w.is_finite()) {
            return breach("non-finite field value".into());
        }
        if self.cfg.positivity && below_hard > 0 {
            return breach(format!("{below_hard} nodes below −100·pos_tol"));
        }
        let e = state.ledger.entries.last().expect("entry just pushed");
        for (j, p) in state.ledger.exponents.iter().enumerate() {
            let scale = state.ledger.initial[j].max(e.bulk[j]).max(1e-300);
            let sup = self.scenario.absorption.as_ref().map_or(0.0, |a| a.sup_norm());
            if e.scatter_defect[j] > 1e-10 * sup.max(1.0) * scale {
                return breach(format!("scattering defect {:.3e} > 0 for p = {p}", e.scatter_defect[j]));
            }
            if let Some((_, margin)) = state.ledger.dissipation_margins(*p).last() {
                if *margin < -self.cfg.dissipation_tol * state.ledger.initial[j].max(1e-300) {
                    return breach(format!("dissipation margin {margin:.3e} for p = {p}"));
                }
            }
        }
        Ok(())
    }

    /// Runs to `t_final`, calling `observe` after each step.
    pub fn run_with(
        &self,
        t_final: f64,
        mut observe: impl FnMut(&SimulationState) -> Result<(), SolverError>,
    ) -> Result<SimulationState, SolverError> {
        let mut state = self.initial_state();
        for dt in self.step_plan(t_final) {
            self.step(&mut state, dt)?;
            observe(&state)?;
        }
        Ok(state)
    }

    pub fn run(&self, t_final: f64) -> Result<SimulationState, SolverError> {
        self.run_with(t_final, |_| Ok(()))
    }
}

/// Runs `scenario` to `t_final`; the ledger in the returned state is the diagnostics series.
pub fn run(scenario: &Scenario, t_final: f64, cfg: &SolverConfig) -> Result<SimulationState, SolverError> {
    Solver::new(scenario, cfg.clone())?.run(t_final)
}

/// Backward characteristic of `p` sampled for dense evaluation.
struct Characteristic {
    samples: Vec<(f64, PhasePoint, (crate::flow::Vec3, crate::flow::Vec3))>,
    exit: Option<(f64, PhasePoint)>,
    vf: VelocityField,
}

impl Characteristic {
    fn trace(domain: &SpatialDomain, vf: &VelocityField, p: &PhasePoint, t: f64, cfg: &FlowConfig) -> Self {
        let h = cfg.dt_base;
        let mut samples = vec![(0.0, *p, crate::flow::rhs_unchecked(vf, p))];
        let mut s = 0.0;
        let mut cur = *p;
        let mut exit = None;
        while s < t {
            let step = h.min(t - s);
            match trace_in_domain(domain, vf, &cur, step, Sense::Backward, h, cfg.integrator, cfg.event_tol) {
                TraceOutcome::Inside(q) => {
                    s += step;
                    cur = q;
                    samples.push((s, q, crate::flow::rhs_unchecked(vf, &q)));
                }
                TraceOutcome::Exited { time, exit: e, .. } => {
                    s += time;
                    samples.push((s, e, crate::flow::rhs_unchecked(vf, &e)));
                    exit = Some((s, e));
                    break;
                }
            }
        }
        Characteristic { samples, exit, vf: vf.clone() }
    }

    /// `φ_{−r}(p)` by cubic Hermite interpolation of the samples.
    fn at(&self, r: f64) -> PhasePoint {
        if self.vf.is_constant() {
            let p = &self.samples[0].1;
            let v = self.vf.nu_max();
            return PhasePoint::new(p.x - p.k * (r * v / p.k.norm()), p.k);
        }
        let i = self.samples.partition_point(|s| s.0 <= r).clamp(1, self.samples.len() - 1);
        let (r0, p0, d0) = &self.samples[i - 1];
        let (r1, p1, d1) = &self.samples[i];
        let h = r1 - r0;
        if h <= 0.0 {
            return *p1;
        }
        let u = (r - r0) / h;
        let (h00, h10, h01, h11) =
            (2.0 * u.powi(3) - 3.0 * u * u + 1.0, u.powi(3) - 2.0 * u * u + u, -2.0 * u.powi(3) + 3.0 * u * u, u.powi(3) - u * u);
        // derivative with respect to backward time is −rhs
        PhasePoint::new(
            p0.x * h00 - d0.0 * (h10 * h) + p1.x * h01 - d1.0 * (h11 * h),
            p0.k * h00 - d0.1 * (h10 * h) + p1.k * h01 - d1.1 * (h11 * h),
        )
    }
}

fn adaptive_simpson(
    f: &dyn Fn(f64) -> CoherenceMatrix,
    a: f64,
    b: f64,
    fa: CoherenceMatrix,
    fm: CoherenceMatrix,
    fb: CoherenceMatrix,
    whole: CoherenceMatrix,
    tol: f64,
    depth: usize,
) -> CoherenceMatrix {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (fa + flm * 4.0 + fm) * ((m - a) / 6.0);
    let right = (fm + frm * 4.0 + fb) * ((b - m) / 6.0);
    let diff = left + right - whole;
    if depth == 0 || diff.max_abs() <= 15.0 * tol {
        return left + right + diff * (1.0 / 15.0);
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

fn integrate(f: &dyn Fn(f64) -> CoherenceMatrix, a: f64, b: f64, tol: f64) -> CoherenceMatrix {
    if b <= a {
        return CoherenceMatrix::ZERO;
    }
    // split to avoid aliasing of localized integrands
    let pieces = 16;
    let h = (b - a) / pieces as f64;
    let mut acc = CoherenceMatrix::ZERO;
    for i in 0..pieces {
        let (x0, x1) = (a + i as f64 * h, a + (i + 1) as f64 * h);
        let (f0, fm, f1) = (f(x0), f(0.5 * (x0 + x1)), f(x1));
        let whole = (f0 + fm * 4.0 + f1) * (h / 6.0);
        acc += adaptive_simpson(f, x0, x1, f0, fm, f1, whole, tol / pieces as f64, 30);
    }
    acc
}

/// Mesh-free pure-transport solution at `(p, t)`:
/// `G(t)u₀ + ∫₀ᵗ G(t−s)q(s) ds` plus the inflow term `g(φ_{−τ₋}, t − τ₋)`.
pub fn mild_solution_point(
    vf: &VelocityField,
    domain: &SpatialDomain,
    u0: Option<&dyn PhaseData>,
    g: Option<&dyn PhaseData>,
    q: Option<&dyn PhaseData>,
    p: &PhasePoint,
    t: f64,
    cfg: &FlowConfig,
) -> CoherenceMatrix {
    if t <= 0.0 {
        return u0.map_or(CoherenceMatrix::ZERO, |u| u.value(p, 0.0));
    }
    let ch = Characteristic::trace(domain, vf, p, t, cfg);
    let tol = cfg.event_tol;
    let tau = ch.exit.map(|e| e.0);
    let mut acc = CoherenceMatrix::ZERO;
    // initial-data term with Y(τ₋ − t)
    let y_init = match tau {
        None => 1.0,
        Some(tau) => heaviside(tau - t, tol),
    };
    if y_init > 0.0 {
        if let Some(u) = u0 {
            acc += u.value(&ch.at(t), 0.0).scale(y_init);
        }
    }
    // boundary term with Y(t − τ₋)
    if let (Some((tau, e)), Some(g)) = (ch.exit, g) {
        let y = heaviside(t - tau, tol);
        if y > 0.0 {
            acc += g.value(&e, t - tau).scale(y);
        }
    }
    if let Some(q) = q {
        let upper = tau.map_or(t, |tau| tau.min(t));
        let f = |r: f64| q.value(&ch.at(r), t - r);
        acc += integrate(&f, 0.0, upper, 1e-11);
    }
    acc
}

/// `Eg(p) = e^{−τ₋(p)} g(φ_{−τ₋}(p))`, zero when the backward ray never exits.
pub fn lifting_static(
    vf: &VelocityField,
    domain: &SpatialDomain,
    g: &dyn Fn(&PhasePoint) -> CoherenceMatrix,
    p: &PhasePoint,
    cfg: &FlowConfig,
) -> CoherenceMatrix {
    let horizon = default_horizon(domain, vf);
    match trace_in_domain(domain, vf, p, horizon, Sense::Backward, cfg.dt_base, cfg.integrator, cfg.event_tol) {
        TraceOutcome::Inside(_) => CoherenceMatrix::ZERO,
        TraceOutcome::Exited { time, exit, .. } => g(&exit).scale((-time).exp()),
    }
}

/// `Ẽg(p, t) = g(φ_{−τ₋}(p), t − τ₋)·χ_U·Y(t − τ₋)`.
pub fn lifting_timedep(
    vf: &VelocityField,
    domain: &SpatialDomain,
    g: &dyn PhaseData,
    p: &PhasePoint,
    t: f64,
    cfg: &FlowConfig,
) -> Result<CoherenceMatrix, SolverError> {
    if !g.vanishes_at_start() {
        let probe = PhasePoint::new(p.x, p.k);
        let v = g.value(&probe, 0.0).max_abs();
        if v > 1e-12 {
            return Err(SolverError::Compatibility(v));
        }
    }
    let horizon = default_horizon(domain, vf);
    Ok(match trace_in_domain(domain, vf, p, horizon, Sense::Backward, cfg.dt_base, cfg.integrator, cfg.event_tol) {
        TraceOutcome::Inside(_) => CoherenceMatrix::ZERO,
        TraceOutcome::Exited { time, exit, .. } => {
            let y = heaviside(t - time, cfg.event_tol);
            if y == 0.0 {
                CoherenceMatrix::ZERO
            } else {
                g.value(&exit, t - time).scale(y)
            }
        }
    })
}

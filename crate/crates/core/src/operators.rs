//! Local operators: polarization coupling `N`, scattering `S`, absorption `Σ`.

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use thiserror::Error;

use crate::algebra::CoherenceMatrix;
use crate::diagnostics::{fixed_sum, lp_norm_pow};
use crate::flow::{PhasePoint, Vec3};
use crate::geometry::{MomentumGrid, PhaseGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("inadmissible kernel: normalization residual {residual:.3e} exceeds {tol:.1e}")]
    InadmissibleKernel { residual: f64, tol: f64 },
    #[error("inadmissible kernel: symmetry residual ‖T(k,k') − T(k',k)ᵀ‖ = {residual:.3e}")]
    AsymmetricKernel { residual: f64 },
    #[error("field on {got} directions does not match the {expected}-direction shell")]
    ShellMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Admissibility threshold for the discrete normalization residual.
pub const NORM_TOL: f64 = 1e-8;
/// Admissibility threshold for the transfer-matrix symmetry residual.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Scalar spatial profile `base + amplitude·exp(−|x − c|²/w²)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarProfile {
    Constant { value: f64 },
    Gaussian { base: f64, amplitude: f64, center: Vec3, width: f64 },
}

impl ScalarProfile {
    pub fn value(&self, x: &Vec3) -> f64 {
        match self {
            ScalarProfile::Constant { value } => *value,
            ScalarProfile::Gaussian { base, amplitude, center, width } => {
                base + amplitude * (-(x - center).norm_squared() / (width * width)).exp()
            }
        }
    }

    /// Bound on `|value|`.
    pub fn sup_abs(&self) -> f64 {
        match self {
            ScalarProfile::Constant { value } => value.abs(),
            ScalarProfile::Gaussian { base, amplitude, .. } => base.abs().max((base + amplitude).abs()),
        }
    }

    /// Lower bound on `value`.
    pub fn inf(&self) -> f64 {
        match self {
            ScalarProfile::Constant { value } => *value,
            ScalarProfile::Gaussian { base, amplitude, .. } => base.min(base + amplitude),
        }
    }

    pub fn validate(&self) -> Result<(), OperatorError> {
        if let ScalarProfile::Gaussian { width, .. } = self {
            if !(*width > 0.0) {
                return Err(OperatorError::InvalidParameter(format!("profile width must be positive, got {width}")));
            }
        }
        Ok(())
    }
}

/// `n(x, k) = n₀(x) + a·(k̂·e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingField {
    spatial: ScalarProfile,
    directional: f64,
    axis: Vec3,
    sup: f64,
}

impl CouplingField {
    pub fn new(spatial: ScalarProfile, directional: f64, axis: Vec3) -> Result<Self, OperatorError> {
        spatial.validate()?;
        let n = axis.norm();
        if directional != 0.0 && !(n > 0.0) {
            return Err(OperatorError::InvalidParameter("coupling axis must be nonzero".into()));
        }
        let axis = if n > 0.0 { axis / n } else { Vec3::z() };
        let sup = spatial.sup_abs() + directional.abs();
        Ok(CouplingField { spatial, directional, axis, sup })
    }

    pub fn constant(n: f64) -> Self {
        CouplingField { spatial: ScalarProfile::Constant { value: n }, directional: 0.0, axis: Vec3::z(), sup: n.abs() }
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup
    }

    pub fn value(&self, p: &PhasePoint) -> f64 {
        let mut n = self.spatial.value(&p.x);
        if self.directional != 0.0 {
            n += self.directional * p.k.dot(&self.axis) / p.k.norm();
        }
        debug_assert!(n.abs() <= self.sup * (1.0 + 1e-12));
        n
    }
}

/// `N(W) = n(JW − WJ)`, i.e. `(I, Q, U, V) ↦ (0, 2nU, −2nQ, 0)`.
pub fn apply_coupling(nf: &CouplingField, w: &CoherenceMatrix, p: &PhasePoint) -> CoherenceMatrix {
    let n = nf.value(p);
    CoherenceMatrix::new(0.0, 2.0 * n * w.u, -2.0 * n * w.q, 0.0)
}

/// Rotation of `(Q, U)` by the angle `θ`: `Q' = cQ + sU`, `U' = −sQ + cU`.
pub fn rotate_qu(w: &CoherenceMatrix, angle: f64) -> CoherenceMatrix {
    let (s, c) = angle.sin_cos();
    CoherenceMatrix::new(w.i, c * w.q + s * w.u, -s * w.q + c * w.u, w.v)
}

/// `e^{tN}W`.
pub fn coupling_exponential(nf: &CouplingField, w: &CoherenceMatrix, t: f64, p: &PhasePoint) -> CoherenceMatrix {
    rotate_qu(w, 2.0 * t * nf.value(p))
}

/// `e^{−tΣ}W` for `t ≥ 0`.
pub fn absorption_exponential(sigma: f64, w: &CoherenceMatrix, t: f64) -> Result<CoherenceMatrix, OperatorError> {
    if t < 0.0 {
        return Err(OperatorError::InvalidParameter(format!("absorption step needs t ≥ 0, got {t}")));
    }
    if sigma < 0.0 {
        return Err(OperatorError::InvalidParameter(format!("absorption rate must be nonnegative, got {sigma}")));
    }
    Ok(w.scale((-t * sigma).exp()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhaseFunction {
    Isotropic,
    /// `¾(1 + μ²)`.
    Rayleigh,
    HenyeyGreenstein { g: f64 },
}

impl PhaseFunction {
    pub fn value(&self, mu: f64) -> f64 {
        match self {
            PhaseFunction::Isotropic => 1.0,
            PhaseFunction::Rayleigh => 0.75 * (1.0 + mu * mu),
            PhaseFunction::HenyeyGreenstein { g } => (1.0 - g * g) / (1.0 + g * g - 2.0 * g * mu).powf(1.5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransferPreset {
    /// `T ≡ I₂`.
    Identity,
    /// Rotation into the scattering plane, `diag(1, μ)`, and back.
    RayleighLike,
}

pub type Real2 = [[f64; 2]; 2];

fn mat2_mul(a: &Real2, b: &Real2) -> Real2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

fn mat2_t(a: &Real2) -> Real2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

/// Local polarization basis `(θ̂, φ̂)` at a direction.
fn local_basis(d: &Vec3) -> (Vec3, Vec3) {
    let n = d.norm();
    let mu = (d.z / n).clamp(-1.0, 1.0);
    let st = (1.0 - mu * mu).sqrt();
    let phi = d.y.atan2(d.x);
    let (sp, cp) = phi.sin_cos();
    (Vec3::new(mu * cp, mu * sp, -st), Vec3::new(-sp, cp, 0.0))
}

/// Rows: components along `m` and `k̂ × m` of the local basis vectors.
fn plane_rotation(d: &Vec3, m: &Vec3) -> Real2 {
    let (e1, e2) = local_basis(d);
    let b = (d / d.norm()).cross(m);
    [[m.dot(&e1), m.dot(&e2)], [b.dot(&e1), b.dot(&e2)]]
}

fn plane_normal(k_out: &Vec3, k_in: &Vec3) -> Vec3 {
    let m = k_in.cross(k_out);
    let n = m.norm();
    if n > 1e-12 * k_in.norm() * k_out.norm() {
        return m / n;
    }
    // parallel or antiparallel: any normal of the common line, same for both orders
    let a = k_out / k_out.norm();
    let m = Vec3::z().cross(&a);
    if m.norm() > 1e-8 {
        m.normalize()
    } else {
        Vec3::x()
    }
}

/// Scattering kernel `σ(x, μ) = σ₀(x)·p(μ)` with transfer matrices `T(k, k')`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringKernel {
    pub strength: ScalarProfile,
    pub phase: PhaseFunction,
    pub transfer: TransferPreset,
    /// Deliberate asymmetry added to `T`; zero for admissible kernels.
    pub symmetry_defect: f64,
}

impl ScatteringKernel {
    pub fn new(strength: ScalarProfile, phase: PhaseFunction, transfer: TransferPreset) -> Result<Self, OperatorError> {
        strength.validate()?;
        if strength.inf() < 0.0 {
            return Err(OperatorError::InvalidParameter("scattering strength must be nonnegative".into()));
        }
        if let PhaseFunction::HenyeyGreenstein { g } = phase {
            if !(g.abs() < 1.0) {
                return Err(OperatorError::InvalidParameter(format!("Henyey–Greenstein g must be in (−1, 1), got {g}")));
            }
        }
        Ok(ScatteringKernel { strength, phase, transfer, symmetry_defect: 0.0 })
    }

    pub fn with_symmetry_defect(mut self, eps: f64) -> Self {
        self.symmetry_defect = eps;
        self
    }

    /// `σ(x, μ)`.
    pub fn sigma(&self, x: &Vec3, mu: f64) -> f64 {
        self.strength.value(x) * self.phase.value(mu)
    }

    /// `T(k, k')`, mapping incoming `k'` to outgoing `k`.
    pub fn transfer_matrix(&self, k_out: &Vec3, k_in: &Vec3) -> Real2 {
        let mut t = match self.transfer {
            TransferPreset::Identity => [[1.0, 0.0], [0.0, 1.0]],
            TransferPreset::RayleighLike => {
                let m = plane_normal(k_out, k_in);
                let mu = k_out.dot(k_in) / (k_out.norm() * k_in.norm());
                let ro = plane_rotation(k_out, &m);
                let ri = plane_rotation(k_in, &m);
                let d = [[1.0, 0.0], [0.0, mu]];
                mat2_mul(&mat2_t(&ro), &mat2_mul(&d, &ri))
            }
        };
        t[0][1] += self.symmetry_defect;
        t
    }
}

/// `max ‖T(kᵢ, kⱼ) − T(kⱼ, kᵢ)ᵀ‖_F` over direction node pairs.
pub fn kernel_symmetry_residual(kernel: &ScatteringKernel, momentum: &MomentumGrid) -> f64 {
    let d = momentum.directions();
    let mut worst = 0.0f64;
    for i in 0..d.len() {
        for j in i..d.len() {
            let a = kernel.transfer_matrix(&d[i], &d[j]);
            let b = mat2_t(&kernel.transfer_matrix(&d[j], &d[i]));
            let r = (0..2).flat_map(|x| (0..2).map(move |y| (x, y))).map(|(x, y)| (a[x][y] - b[x][y]).powi(2)).sum::<f64>();
            worst = worst.max(r.sqrt());
        }
    }
    worst
}

/// Stokes columns of `W ↦ T W Tᵀ` restricted to `(I, Q, U)`, and the `V` factor `det T`.
fn mueller_real(t: &Real2) -> ([[f64; 3]; 3], f64) {
    let basis = [
        CoherenceMatrix::new(1.0, 0.0, 0.0, 0.0),
        CoherenceMatrix::new(0.0, 1.0, 0.0, 0.0),
        CoherenceMatrix::new(0.0, 0.0, 1.0, 0.0),
    ];
    let mut m = [[0.0; 3]; 3];
    for (c, e) in basis.iter().enumerate() {
        let h = e.to_matrix();
        let w: Real2 = [[h.e[0].re, h.e[1].re], [h.e[2].re, h.e[3].re]];
        let r = mat2_mul(t, &mat2_mul(&w, &mat2_t(t)));
        let s = CoherenceMatrix::from_real_symmetric(r[0][0], 0.5 * (r[0][1] + r[1][0]), r[1][1]);
        m[0][c] = s.i;
        m[1][c] = s.q;
        m[2][c] = s.u;
    }
    (m, t[0][0] * t[1][1] - t[0][1] * t[1][0])
}

/// `T·W·Tᵀ` for a real `T`.
pub fn congruence(t: &Real2, w: &CoherenceMatrix) -> CoherenceMatrix {
    let (m, det) = mueller_real(t);
    let x = [w.i, w.q, w.u];
    let r: Vec<f64> = (0..3).map(|a| (0..3).map(|b| m[a][b] * x[b]).sum()).collect();
    CoherenceMatrix::new(r[0], r[1], r[2], det * w.v)
}

fn sym_from(s: &CoherenceMatrix) -> Real2 {
    let m = s.to_matrix();
    [[m.e[0].re, m.e[1].re], [m.e[2].re, m.e[3].re]]
}

fn sym_to(a: &Real2) -> CoherenceMatrix {
    CoherenceMatrix::from_real_symmetric(a[0][0], 0.5 * (a[0][1] + a[1][0]), a[1][1])
}

/// Per-direction normalization diagnostics on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationReport {
    /// `Σ` per unit strength on the unit sphere (target of the rebalance).
    pub sigma_unit: f64,
    /// Max relative residual `‖M − Σ·I‖/Σ` before rebalancing.
    pub raw_residual: f64,
    /// Same after rebalancing.
    pub residual: f64,
    pub iterations: usize,
    /// Symmetry residual of `T` on the node pairs.
    pub symmetry_residual: f64,
}

/// Scattering operator on a phase grid.
///
/// The kernel factorizes as `σ₀(x)·p(μ)·T(k, k')`, so one dense unit-sphere
/// block serves every spatial node and shell: at `(x, r)` the operator is
/// `σ₀(x)·r²·B` and the absorption is `σ₀(x)·r²·Σ_unit`.
#[derive(Debug, Clone)]
pub struct ScatteringOperator {
    n_dir: usize,
    /// `(I, Q, U)` block, `3n × 3n`, row = out-direction.
    iqu: Array2<f64>,
    /// `V` block, `n × n`.
    v: Array2<f64>,
    /// Rebalanced weights and transfer matrices, `[i·n + j]`.
    coeff: Vec<f64>,
    transfer: Vec<Real2>,
    radii: Vec<f64>,
    strength: Vec<f64>,
    pub report: NormalizationReport,
}

/// `A` with `A K A = Σ*·I` iterated by damped symmetric Sinkhorn steps.
fn rebalance(c: &[f64], t: &[Real2], n: usize, weights: &[f64]) -> (Vec<Real2>, f64, f64, f64, usize) {
    let moment = |a: &[Real2], i: usize| -> Real2 {
        let mut k = [[0.0; 2]; 2];
        for j in 0..n {
            let tij = &t[i * n + j];
            let aj2 = mat2_mul(&a[j], &a[j]);
            let m = mat2_mul(tij, &mat2_mul(&aj2, &mat2_t(tij)));
            for x in 0..2 {
                for y in 0..2 {
                    k[x][y] += c[i * n + j] * m[x][y];
                }
            }
        }
        k
    };
    let identity: Real2 = [[1.0, 0.0], [0.0, 1.0]];
    let mut a = vec![identity; n];
    let raw: Vec<CoherenceMatrix> = (0..n).map(|i| sym_to(&moment(&a, i))).collect();
    let wsum: f64 = weights.iter().sum();
    let target = raw.iter().zip(weights).map(|(m, w)| 0.5 * m.trace() * w).sum::<f64>() / wsum;
    let residual_of = |a: &[Real2]| -> f64 {
        (0..n)
            .map(|i| {
                let k = moment(a, i);
                let m = mat2_mul(&a[i], &mat2_mul(&k, &a[i]));
                let d = sym_to(&m) - CoherenceMatrix::IDENTITY.scale(target);
                (d.to_matrix().frobenius()) / target
            })
            .fold(0.0, f64::max)
    };
    if target <= 0.0 {
        return (a, 0.0, 0.0, 0.0, 0);
    }
    let raw_residual = residual_of(&a);
    let mut residual = raw_residual;
    let mut it = 0;
    while residual > 1e-14 && it < 2000 {
        let next: Vec<Real2> = (0..n)
            .map(|i| {
                let k = sym_to(&moment(&a, i));
                let f = k.map_spectrum(|l| (target / l.max(1e-300)).sqrt());
                let fa = sym_from(&f);
                let mut r = [[0.0; 2]; 2];
                for x in 0..2 {
                    for y in 0..2 {
                        r[x][y] = 0.5 * (a[i][x][y] + fa[x][y]);
                    }
                }
                r
            })
            .collect();
        a = next;
        it += 1;
        if it % 5 == 0 {
            residual = residual_of(&a);
        }
    }
    residual = residual_of(&a);
    (a, target, raw_residual, residual, it)
}

impl ScatteringOperator {
    /// Assembles and rebalances the operator for `grid`.
    pub fn assemble(kernel: &ScatteringKernel, grid: &PhaseGrid) -> Result<Self, OperatorError> {
        let strength: Vec<f64> = grid.lattice.positions().iter().map(|x| kernel.strength.value(x)).collect();
        Self::assemble_with_strength(kernel, &grid.momentum, strength)
    }

    fn assemble_with_strength(kernel: &ScatteringKernel, momentum: &MomentumGrid, strength: Vec<f64>) -> Result<Self, OperatorError> {
        let dirs = momentum.directions();
        let w = momentum.direction_weights();
        let n = dirs.len();
        let symmetry_residual = kernel_symmetry_residual(kernel, momentum);
        let mut c = vec![0.0; n * n];
        let mut t = vec![[[0.0; 2]; 2]; n * n];
        for i in 0..n {
            for j in 0..n {
                let mu = dirs[i].dot(&dirs[j]).clamp(-1.0, 1.0);
                c[i * n + j] = w[j] * kernel.phase.value(mu);
                t[i * n + j] = kernel.transfer_matrix(&dirs[i], &dirs[j]);
            }
        }
        let (a, target, raw_residual, residual, iterations) = rebalance(&c, &t, n, w);
        let mut iqu = Array2::<f64>::zeros((3 * n, 3 * n));
        let mut vb = Array2::<f64>::zeros((n, n));
        let mut transfer = vec![[[0.0; 2]; 2]; n * n];
        for i in 0..n {
            for j in 0..n {
                let tt = mat2_mul(&a[i], &mat2_mul(&t[i * n + j], &a[j]));
                transfer[i * n + j] = tt;
                let (m, det) = mueller_real(&tt);
                let cij = c[i * n + j];
                for x in 0..3 {
                    for y in 0..3 {
                        iqu[[3 * i + x, 3 * j + y]] = cij * m[x][y];
                    }
                }
                vb[[i, j]] = cij * det;
            }
        }
        Ok(ScatteringOperator {
            n_dir: n,
            iqu,
            v: vb,
            coeff: c,
            transfer,
            radii: momentum.radii().to_vec(),
            strength,
            report: NormalizationReport { sigma_unit: target, raw_residual, residual, iterations, symmetry_residual },
        })
    }

    /// Fails unless the kernel is symmetric and the normalization holds to [`NORM_TOL`].
    pub fn check_admissible(&self) -> Result<(), OperatorError> {
        if self.report.symmetry_residual > SYMMETRY_TOL {
            return Err(OperatorError::AsymmetricKernel { residual: self.report.symmetry_residual });
        }
        if !(self.report.residual <= NORM_TOL) {
            return Err(OperatorError::InadmissibleKernel { residual: self.report.residual, tol: NORM_TOL });
        }
        Ok(())
    }

    pub fn n_directions(&self) -> usize {
        self.n_dir
    }

    /// `Σ(x, r) = σ₀(x)·r²·Σ_unit`.
    pub fn absorption(&self, space: usize, shell: usize) -> f64 {
        self.strength[space] * self.radii[shell].powi(2) * self.report.sigma_unit
    }

    /// `sup Σ` over the grid.
    pub fn absorption_sup(&self) -> f64 {
        let smax = self.strength.iter().cloned().fold(0.0, f64::max);
        let rmax = self.radii.iter().cloned().fold(0.0, f64::max);
        smax * rmax * rmax * self.report.sigma_unit
    }

    pub fn absorption_field(&self) -> AbsorptionField {
        let ns = self.radii.len();
        let values = (0..self.strength.len() * ns).map(|i| self.absorption(i / ns, i % ns)).collect();
        AbsorptionField::from_values(values, ns, AbsorptionSource::Derived)
    }

    /// Rebalanced `σ w'` and `T` for out-direction `i`, in-direction `j` (unit strength, unit sphere).
    pub fn pair(&self, i: usize, j: usize) -> (f64, Real2) {
        (self.coeff[i * self.n_dir + j], self.transfer[i * self.n_dir + j])
    }

    /// `S` on the directions of one shell at one spatial node.
    pub fn apply_shell(&self, space: usize, shell: usize, values: &[CoherenceMatrix]) -> Result<Vec<CoherenceMatrix>, OperatorError> {
        if values.len() != self.n_dir {
            return Err(OperatorError::ShellMismatch { expected: self.n_dir, got: values.len() });
        }
        let n = self.n_dir;
        let scale = self.strength[space] * self.radii[shell].powi(2);
        let mut out = vec![CoherenceMatrix::ZERO; n];
        for i in 0..n {
            let mut acc = [0.0; 4];
            for (j, w) in values.iter().enumerate() {
                let x = [w.i, w.q, w.u];
                for a in 0..3 {
                    for b in 0..3 {
                        acc[a] += self.iqu[[3 * i + a, 3 * j + b]] * x[b];
                    }
                }
                acc[3] += self.v[[i, j]] * w.v;
            }
            out[i] = CoherenceMatrix::from_array(acc).scale(scale);
        }
        Ok(out)
    }

    /// `S` applied to a whole field (node order of `grid`).
    pub fn apply(&self, grid: &PhaseGrid, field: &[CoherenceMatrix]) -> Vec<CoherenceMatrix> {
        let mut out = vec![CoherenceMatrix::ZERO; field.len()];
        self.apply_into(grid, field, &mut out);
        out
    }

    pub fn apply_into(&self, grid: &PhaseGrid, field: &[CoherenceMatrix], out: &mut [CoherenceMatrix]) {
        let ns = grid.n_shells();
        let nd = self.n_dir;
        let nsp = grid.n_space();
        assert_eq!(field.len(), nsp * ns * nd);
        assert_eq!(out.len(), field.len());
        const CHUNK: usize = 128;
        let iqu_t = self.iqu.t();
        let v_t = self.v.t();
        for r in 0..ns {
            let r2 = self.radii[r].powi(2);
            let starts: Vec<usize> = (0..nsp).step_by(CHUNK).collect();
            let blocks: Vec<(usize, Array2<f64>, Array2<f64>)> = starts
                .par_iter()
                .map(|&s0| {
                    let rows = CHUNK.min(nsp - s0);
                    let mut x = Array2::<f64>::zeros((rows, 3 * nd));
                    let mut y = Array2::<f64>::zeros((rows, nd));
                    for a in 0..rows {
                        let base = ((s0 + a) * ns + r) * nd;
                        for d in 0..nd {
                            let w = &field[base + d];
                            x[[a, 3 * d]] = w.i;
                            x[[a, 3 * d + 1]] = w.q;
                            x[[a, 3 * d + 2]] = w.u;
                            y[[a, d]] = w.v;
                        }
                    }
                    (s0, x.dot(&iqu_t), y.dot(&v_t))
                })
                .collect();
            for (s0, x, y) in blocks {
                write_block(out, s0, r, ns, nd, &x.view(), &y.view(), &self.strength, r2);
            }
        }
    }

    /// Copy of the dense unit-sphere `(I, Q, U)` block (rows out, cols in).
    pub fn iqu_block(&self) -> ArrayView2<'_, f64> {
        self.iqu.slice(s![.., ..])
    }
}

#[allow(clippy::too_many_arguments)]
fn write_block(
    out: &mut [CoherenceMatrix],
    s0: usize,
    r: usize,
    ns: usize,
    nd: usize,
    x: &ArrayView2<f64>,
    y: &ArrayView2<f64>,
    strength: &[f64],
    r2: f64,
) {
    for a in 0..x.nrows() {
        let sc = strength[s0 + a] * r2;
        let base = ((s0 + a) * ns + r) * nd;
        for d in 0..nd {
            out[base + d] =
                CoherenceMatrix::new(sc * x[[a, 3 * d]], sc * x[[a, 3 * d + 1]], sc * x[[a, 3 * d + 2]], sc * y[[a, d]]);
        }
    }
}

/// Normalization check at one spatial point: `Σ` per shell and the residual.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaReport {
    pub sigma: Vec<f64>,
    pub residual: f64,
    pub raw_residual: f64,
}

/// Discrete normalization `Σ(x, k) = ½Tr M(x, k)` on every shell of `momentum`.
pub fn build_sigma(kernel: &ScatteringKernel, momentum: &MomentumGrid, x: &Vec3) -> Result<SigmaReport, OperatorError> {
    let op = ScatteringOperator::assemble_with_strength(kernel, momentum, vec![kernel.strength.value(x)])?;
    op.check_admissible()?;
    let sigma = (0..momentum.n_shells()).map(|r| op.absorption(0, r)).collect();
    Ok(SigmaReport { sigma, residual: op.report.residual, raw_residual: op.report.raw_residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbsorptionSource {
    Derived,
    UserSupplied,
}

/// `Σ` at every `(space, shell)` pair of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionField {
    values: Vec<f64>,
    n_shells: usize,
    pub source: AbsorptionSource,
}

impl AbsorptionField {
    fn from_values(values: Vec<f64>, n_shells: usize, source: AbsorptionSource) -> Self {
        AbsorptionField { values, n_shells, source }
    }

    /// User-supplied `Σ(x)`, independent of `k`.
    pub fn user(profile: &ScalarProfile, grid: &PhaseGrid) -> Result<Self, OperatorError> {
        profile.validate()?;
        if profile.inf() < 0.0 {
            return Err(OperatorError::InvalidParameter("absorption must be nonnegative".into()));
        }
        let ns = grid.n_shells();
        let values = grid.lattice.positions().iter().flat_map(|x| std::iter::repeat_n(profile.value(x), ns)).collect();
        Ok(Self::from_values(values, ns, AbsorptionSource::UserSupplied))
    }

    pub fn value(&self, space: usize, shell: usize) -> f64 {
        self.values[space * self.n_shells + shell]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// `(‖N(U)‖_p, 2‖n‖_∞‖U‖_p)`.
pub fn coupling_bound_check(nf: &CouplingField, grid: &PhaseGrid, u: &[CoherenceMatrix], p: f64) -> (f64, f64) {
    let nu: Vec<CoherenceMatrix> =
        u.par_iter().enumerate().map(|(i, w)| apply_coupling(nf, w, &grid.phase_point(i))).collect();
    let lhs = lp_norm_pow(grid, &nu, p).powf(1.0 / p);
    let rhs = 2.0 * nf.sup_norm() * lp_norm_pow(grid, u, p).powf(1.0 / p);
    (lhs, rhs)
}

/// `(‖S(U)‖_p, ‖Σ‖_∞‖U‖_p)`.
pub fn scattering_bound_check(op: &ScatteringOperator, grid: &PhaseGrid, u: &[CoherenceMatrix], p: f64) -> (f64, f64) {
    let su = op.apply(grid, u);
    scattering_bound_from(op, grid, u, &su, p)
}

pub fn scattering_bound_from(
    op: &ScatteringOperator,
    grid: &PhaseGrid,
    u: &[CoherenceMatrix],
    su: &[CoherenceMatrix],
    p: f64,
) -> (f64, f64) {
    let lhs = lp_norm_pow(grid, su, p).powf(1.0 / p);
    let rhs = op.absorption_sup() * lp_norm_pow(grid, u, p).powf(1.0 / p);
    (lhs, rhs)
}

fn absorption_at(op: &ScatteringOperator, grid: &PhaseGrid, node: usize) -> f64 {
    let (s, r, _) = grid.split_index(node);
    op.absorption(s, r)
}

/// `(∫|Tr[S(U)V]|, ‖Σ^{1/p}U‖_p ‖Σ^{1/q}V‖_q)` for `1 < p < ∞`.
pub fn duality_pairing_check(
    op: &ScatteringOperator,
    grid: &PhaseGrid,
    u: &[CoherenceMatrix],
    v: &[CoherenceMatrix],
    p: f64,
) -> Result<(f64, f64), OperatorError> {
    let su = op.apply(grid, u);
    duality_pairing_from(op, grid, u, &su, v, p)
}

pub fn duality_pairing_from(
    op: &ScatteringOperator,
    grid: &PhaseGrid,
    u: &[CoherenceMatrix],
    su: &[CoherenceMatrix],
    v: &[CoherenceMatrix],
    p: f64,
) -> Result<(f64, f64), OperatorError> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(OperatorError::InvalidParameter(format!("duality pairing needs 1 < p < ∞, got {p}")));
    }
    let q = p / (p - 1.0);
    let sig = |i: usize| absorption_at(op, grid, i);
    let lhs = fixed_sum(u.len(), |i| grid.weight(i) * su[i].trace_product(&v[i]).abs());
    let a = fixed_sum(u.len(), |i| grid.weight(i) * sig(i) * u[i].schatten_pow(p));
    let b = fixed_sum(u.len(), |i| grid.weight(i) * sig(i) * v[i].schatten_pow(q));
    Ok((lhs, a.powf(1.0 / p) * b.powf(1.0 / q)))
}

/// `∫Tr[(S(W) − ΣW)·W|W|^{p−2}]`.
pub fn dissipativity_pairing(op: &ScatteringOperator, grid: &PhaseGrid, w: &[CoherenceMatrix], p: f64) -> f64 {
    let sw = op.apply(grid, w);
    dissipativity_pairing_from(op, grid, w, &sw, p)
}

pub fn dissipativity_pairing_from(
    op: &ScatteringOperator,
    grid: &PhaseGrid,
    w: &[CoherenceMatrix],
    sw: &[CoherenceMatrix],
    p: f64,
) -> f64 {
    fixed_sum(w.len(), |i| {
        let sig = absorption_at(op, grid, i);
        let d = w[i].duality_power(p);
        grid.weight(i) * (sw[i] - w[i].scale(sig)).trace_product(&d)
    })
}

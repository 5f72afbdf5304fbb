//! Hamiltonian ray flow for `H(x, k) = ν(x)|k|`.

use nalgebra::{Matrix6, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("wave vector has zero length")]
    ZeroMomentum,
    #[error("invalid velocity profile: {0}")]
    InvalidProfile(String),
    #[error("invalid flow configuration: {0}")]
    InvalidConfig(String),
    #[error("step underflow: |k| collapsed to {0:.3e} during integration")]
    StepUnderflow(f64),
    #[error("momentum bound violated at t = {t}: |K| = {norm}, allowed [{lo}, {hi}]")]
    MomentumBound { t: f64, norm: f64, lo: f64, hi: f64 },
}

/// A point `(x, k)` of phase space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub x: Vec3,
    pub k: Vec3,
}

impl PhasePoint {
    pub fn new(x: Vec3, k: Vec3) -> Self {
        PhasePoint { x, k }
    }

    pub fn k_norm(&self) -> f64 {
        self.k.norm()
    }

    pub fn direction(&self) -> Vec3 {
        self.k / self.k.norm()
    }

    fn add_scaled(&self, s: f64, d: &(Vec3, Vec3)) -> PhasePoint {
        PhasePoint { x: self.x + d.0 * s, k: self.k + d.1 * s }
    }

    pub fn distance(&self, o: &PhasePoint) -> f64 {
        ((self.x - o.x).norm_squared() + (self.k - o.k).norm_squared()).sqrt()
    }
}

/// Quintic smoothstep on `[0, 1]`, clamped outside; C² at the clamps.
fn smoothstep5(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0)
    } else {
        let t2 = t * t;
        let s = t2 * t * (10.0 - 15.0 * t + 6.0 * t2);
        let ds = 30.0 * t2 * (1.0 - t) * (1.0 - t);
        (s, ds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VelocityProfile {
    Constant { value: f64 },
    /// `low + (high − low)·s(g·(x − origin))` with `s` the quintic smoothstep.
    Ramp { origin: Vec3, gradient: Vec3, low: f64, high: f64 },
    /// `base − depth·exp(−|x − center|²/width²)`.
    GaussianLens { base: f64, depth: f64, center: Vec3, width: f64 },
}

/// Refractive velocity `ν(x)` with certified bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    profile: VelocityProfile,
    nu_min: f64,
    nu_max: f64,
    grad_lipschitz: f64,
}

impl VelocityField {
    pub fn new(profile: VelocityProfile) -> Result<Self, FlowError> {
        let bad = |m: String| Err(FlowError::InvalidProfile(m));
        let (nu_min, nu_max, lip) = match &profile {
            VelocityProfile::Constant { value } => {
                if !(*value > 0.0 && value.is_finite()) {
                    return bad(format!("constant velocity must be positive, got {value}"));
                }
                (*value, *value, 0.0)
            }
            VelocityProfile::Ramp { gradient, low, high, .. } => {
                if !(*low > 0.0 && *high > 0.0 && low.is_finite() && high.is_finite()) {
                    return bad(format!("ramp levels must be positive, got {low}, {high}"));
                }
                let g2 = gradient.norm_squared();
                (low.min(*high), low.max(*high), (high - low).abs() * (10.0 / 3f64.sqrt()) * g2)
            }
            VelocityProfile::GaussianLens { base, depth, width, .. } => {
                if !(*width > 0.0) {
                    return bad(format!("lens width must be positive, got {width}"));
                }
                let lo = base - depth.max(0.0);
                let hi = base - depth.min(0.0);
                if !(lo > 0.0 && hi.is_finite()) {
                    return bad(format!("lens velocity must stay positive: base − depth = {lo}"));
                }
                (lo, hi, 2.0 * depth.abs() / (width * width))
            }
        };
        Ok(VelocityField { profile, nu_min, nu_max, grad_lipschitz: lip })
    }

    pub fn constant(value: f64) -> Result<Self, FlowError> {
        Self::new(VelocityProfile::Constant { value })
    }

    pub fn gaussian_lens(base: f64, depth: f64, center: Vec3, width: f64) -> Result<Self, FlowError> {
        Self::new(VelocityProfile::GaussianLens { base, depth, center, width })
    }

    pub fn ramp(origin: Vec3, gradient: Vec3, low: f64, high: f64) -> Result<Self, FlowError> {
        Self::new(VelocityProfile::Ramp { origin, gradient, low, high })
    }

    pub fn profile(&self) -> &VelocityProfile {
        &self.profile
    }

    pub fn nu_min(&self) -> f64 {
        self.nu_min
    }

    pub fn nu_max(&self) -> f64 {
        self.nu_max
    }

    /// Lipschitz constant of `∇ν`.
    pub fn grad_lipschitz(&self) -> f64 {
        self.grad_lipschitz
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.profile, VelocityProfile::Constant { .. })
    }

    pub fn value_and_gradient(&self, x: &Vec3) -> (f64, Vec3) {
        let (v, g) = match &self.profile {
            VelocityProfile::Constant { value } => (*value, Vec3::zeros()),
            VelocityProfile::Ramp { origin, gradient, low, high } => {
                let (s, ds) = smoothstep5(gradient.dot(&(x - origin)));
                (low + (high - low) * s, gradient * ((high - low) * ds))
            }
            VelocityProfile::GaussianLens { base, depth, center, width } => {
                let d = x - center;
                let w2 = width * width;
                let e = (-d.norm_squared() / w2).exp();
                (base - depth * e, d * (2.0 * depth * e / w2))
            }
        };
        debug_assert!(
            v >= self.nu_min * (1.0 - 1e-12) && v <= self.nu_max * (1.0 + 1e-12),
            "velocity {v} outside certified bounds [{}, {}]",
            self.nu_min,
            self.nu_max
        );
        (v, g)
    }

    pub fn value(&self, x: &Vec3) -> f64 {
        self.value_and_gradient(x).0
    }

    pub fn gradient(&self, x: &Vec3) -> Vec3 {
        self.value_and_gradient(x).1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Rk4,
    Heun,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub dt_base: f64,
    pub integrator: Integrator,
    pub event_tol: f64,
    pub jac_fd_step: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { dt_base: 1e-3, integrator: Integrator::Rk4, event_tol: 1e-10, jac_fd_step: 1e-5 }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.dt_base > 0.0 && self.dt_base.is_finite()) {
            return Err(FlowError::InvalidConfig(format!("dt_base must be positive, got {}", self.dt_base)));
        }
        if !(self.event_tol > 0.0) {
            return Err(FlowError::InvalidConfig(format!("event_tol must be positive, got {}", self.event_tol)));
        }
        if !(self.jac_fd_step > 0.0) {
            return Err(FlowError::InvalidConfig(format!("jac_fd_step must be positive, got {}", self.jac_fd_step)));
        }
        Ok(())
    }
}

pub fn hamiltonian(vf: &VelocityField, p: &PhasePoint) -> Result<f64, FlowError> {
    let kn = p.k.norm();
    if kn == 0.0 {
        return Err(FlowError::ZeroMomentum);
    }
    Ok(vf.value(&p.x) * kn)
}

/// `(ẋ, k̇) = (ν k/|k|, −|k|∇ν)`.
pub fn rhs(vf: &VelocityField, p: &PhasePoint) -> Result<(Vec3, Vec3), FlowError> {
    if p.k.norm() == 0.0 {
        return Err(FlowError::ZeroMomentum);
    }
    Ok(rhs_unchecked(vf, p))
}

#[inline]
pub(crate) fn rhs_unchecked(vf: &VelocityField, p: &PhasePoint) -> (Vec3, Vec3) {
    let kn = p.k.norm();
    let (v, g) = vf.value_and_gradient(&p.x);
    (p.k * (v / kn), -g * kn)
}

/// One explicit step of size `h` (any sign).
#[inline]
pub fn step(vf: &VelocityField, p: &PhasePoint, h: f64, integrator: Integrator) -> PhasePoint {
    if vf.is_constant() {
        // straight rays: both schemes are exact
        let v = vf.nu_max();
        return PhasePoint { x: p.x + p.k * (h * v / p.k.norm()), k: p.k };
    }
    match integrator {
        Integrator::Rk4 => {
            let k1 = rhs_unchecked(vf, p);
            let k2 = rhs_unchecked(vf, &p.add_scaled(0.5 * h, &k1));
            let k3 = rhs_unchecked(vf, &p.add_scaled(0.5 * h, &k2));
            let k4 = rhs_unchecked(vf, &p.add_scaled(h, &k3));
            PhasePoint {
                x: p.x + (k1.0 + (k2.0 + k3.0) * 2.0 + k4.0) * (h / 6.0),
                k: p.k + (k1.1 + (k2.1 + k3.1) * 2.0 + k4.1) * (h / 6.0),
            }
        }
        Integrator::Heun => {
            let k1 = rhs_unchecked(vf, p);
            let k2 = rhs_unchecked(vf, &p.add_scaled(h, &k1));
            PhasePoint { x: p.x + (k1.0 + k2.0) * (0.5 * h), k: p.k + (k1.1 + k2.1) * (0.5 * h) }
        }
    }
}

fn step_count(t: f64, dt: f64) -> usize {
    if t == 0.0 {
        0
    } else {
        ((t.abs() / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
    }
}

fn guard(p: &PhasePoint, k0: f64) -> Result<(), FlowError> {
    let kn = p.k.norm();
    if !(kn > 1e-12 * k0) || !kn.is_finite() {
        return Err(FlowError::StepUnderflow(kn));
    }
    Ok(())
}

/// `φ_t(p0)`; negative `t` integrates backward.
pub fn flow_map(vf: &VelocityField, p0: &PhasePoint, t: f64, cfg: &FlowConfig) -> Result<PhasePoint, FlowError> {
    let k0 = p0.k.norm();
    if k0 == 0.0 {
        return Err(FlowError::ZeroMomentum);
    }
    let n = step_count(t, cfg.dt_base);
    if n == 0 {
        return Ok(*p0);
    }
    let h = t / n as f64;
    let mut p = *p0;
    for _ in 0..n {
        p = step(vf, &p, h, cfg.integrator);
        guard(&p, k0)?;
    }
    Ok(p)
}

/// Samples `(t, φ_t(p0))` every `every` steps, always including both ends.
pub fn trajectory(
    vf: &VelocityField,
    p0: &PhasePoint,
    t: f64,
    cfg: &FlowConfig,
    every: usize,
) -> Result<Vec<(f64, PhasePoint)>, FlowError> {
    let k0 = p0.k.norm();
    if k0 == 0.0 {
        return Err(FlowError::ZeroMomentum);
    }
    let every = every.max(1);
    let n = step_count(t, cfg.dt_base);
    let mut out = vec![(0.0, *p0)];
    if n == 0 {
        return Ok(out);
    }
    let h = t / n as f64;
    let mut p = *p0;
    for i in 1..=n {
        p = step(vf, &p, h, cfg.integrator);
        guard(&p, k0)?;
        if i % every == 0 || i == n {
            out.push((h * i as f64, p));
        }
    }
    Ok(out)
}

/// Checks `ν_min/ν_max |k₀| ≤ |K(t)| ≤ ν_max/ν_min |k₀|` on every sample.
pub fn momentum_bounds_check(vf: &VelocityField, traj: &[(f64, PhasePoint)]) -> Result<(f64, f64), FlowError> {
    let Some((_, first)) = traj.first() else {
        return Ok((0.0, 0.0));
    };
    let k0 = first.k.norm();
    let ratio = vf.nu_min() / vf.nu_max();
    let (lo, hi) = (ratio * k0 * (1.0 - 1e-12), k0 / ratio * (1.0 + 1e-12));
    let mut kmin = f64::INFINITY;
    let mut kmax = 0.0f64;
    for (t, p) in traj {
        let kn = p.k.norm();
        if kn < lo || kn > hi {
            return Err(FlowError::MomentumBound { t: *t, norm: kn, lo, hi });
        }
        kmin = kmin.min(kn);
        kmax = kmax.max(kn);
    }
    Ok((kmin, kmax))
}

/// Determinant of the central-difference Jacobian of `φ_t` at `p0`.
pub fn flow_jacobian_det(vf: &VelocityField, p0: &PhasePoint, t: f64, cfg: &FlowConfig) -> Result<f64, FlowError> {
    let dx = cfg.jac_fd_step * p0.x.norm().max(1.0);
    let dk = cfg.jac_fd_step * p0.k.norm();
    let mut jac = Matrix6::<f64>::zeros();
    for col in 0..6 {
        let (mut plus, mut minus) = (*p0, *p0);
        let h = if col < 3 { dx } else { dk };
        if col < 3 {
            plus.x[col] += h;
            minus.x[col] -= h;
        } else {
            plus.k[col - 3] += h;
            minus.k[col - 3] -= h;
        }
        let a = flow_map(vf, &plus, t, cfg)?;
        let b = flow_map(vf, &minus, t, cfg)?;
        for row in 0..3 {
            jac[(row, col)] = (a.x[row] - b.x[row]) / (2.0 * h);
            jac[(row + 3, col)] = (a.k[row] - b.k[row]) / (2.0 * h);
        }
    }
    Ok(jac.determinant())
}

/// `(G(t)v)(p) = v(φ_{−t}(p))` on the whole phase space.
pub fn group_action<T>(
    vf: &VelocityField,
    v: impl Fn(&PhasePoint) -> T,
    t: f64,
    p: &PhasePoint,
    cfg: &FlowConfig,
) -> Result<T, FlowError> {
    let q = flow_map(vf, p, -t, cfg)?;
    Ok(v(&q))
}

/// Heaviside step with `Y(0) = ½`; `|s| ≤ tol` counts as zero.
pub fn heaviside(s: f64, tol: f64) -> f64 {
    if s > tol {
        1.0
    } else if s < -tol {
        0.0
    } else {
        0.5
    }
}

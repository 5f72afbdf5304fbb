//! Bounded domains, travel times, phase-space grids and boundary quadrature.

use std::f64::consts::PI;

use rayon::prelude::*;
use thiserror::Error;

use crate::algebra::CoherenceMatrix;
use crate::flow::{self, FlowConfig, FlowError, Integrator, PhasePoint, Vec3, VelocityField};
use crate::quadrature::{gauss_legendre, gauss_legendre_on, trapezoid_weights};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is not on the boundary (signed distance {0:.3e})")]
    NotOnBoundary(f64),
    #[error("point lies outside the domain (signed distance {0:.3e})")]
    OutsideDomain(f64),
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpatialDomain {
    Ball { center: Vec3, radius: f64 },
    Box { lo: Vec3, hi: Vec3 },
}

impl SpatialDomain {
    pub fn ball(center: Vec3, radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GeometryError::InvalidDomain(format!("ball radius must be positive, got {radius}")));
        }
        Ok(SpatialDomain::Ball { center, radius })
    }

    pub fn cuboid(lo: Vec3, hi: Vec3) -> Result<Self, GeometryError> {
        if (0..3).any(|a| !(hi[a] > lo[a])) {
            return Err(GeometryError::InvalidDomain(format!("box needs lo < hi, got {lo:?} / {hi:?}")));
        }
        Ok(SpatialDomain::Box { lo, hi })
    }

    pub fn unit_box() -> Self {
        SpatialDomain::Box { lo: Vec3::zeros(), hi: Vec3::repeat(1.0) }
    }

    /// Negative inside, positive outside.
    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        match self {
            SpatialDomain::Ball { center, radius } => (x - center).norm() - radius,
            SpatialDomain::Box { lo, hi } => {
                let mut outside = 0.0f64;
                let mut inside = f64::NEG_INFINITY;
                for a in 0..3 {
                    let d = (lo[a] - x[a]).max(x[a] - hi[a]);
                    outside += d.max(0.0).powi(2);
                    inside = inside.max(d);
                }
                if outside > 0.0 {
                    outside.sqrt()
                } else {
                    inside
                }
            }
        }
    }

    /// Outward unit normal of the nearest boundary piece.
    pub fn outward_normal(&self, x: &Vec3) -> Vec3 {
        match self {
            SpatialDomain::Ball { center, .. } => {
                let d = x - center;
                let n = d.norm();
                if n == 0.0 {
                    Vec3::z()
                } else {
                    d / n
                }
            }
            SpatialDomain::Box { lo, hi } => {
                let mut best = (f64::NEG_INFINITY, Vec3::z());
                for a in 0..3 {
                    let mut e = Vec3::zeros();
                    let dl = lo[a] - x[a];
                    if dl > best.0 {
                        e[a] = -1.0;
                        best = (dl, e);
                    }
                    let mut e = Vec3::zeros();
                    let dh = x[a] - hi[a];
                    if dh > best.0 {
                        e[a] = 1.0;
                        best = (dh, e);
                    }
                }
                best.1
            }
        }
    }

    pub fn contains(&self, x: &Vec3, tol: f64) -> bool {
        self.signed_distance(x) <= tol
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        match self {
            SpatialDomain::Ball { center, radius } => (center - Vec3::repeat(*radius), center + Vec3::repeat(*radius)),
            SpatialDomain::Box { lo, hi } => (*lo, *hi),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            SpatialDomain::Ball { radius, .. } => 2.0 * radius,
            SpatialDomain::Box { lo, hi } => (hi - lo).norm(),
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            SpatialDomain::Ball { radius, .. } => 4.0 / 3.0 * PI * radius.powi(3),
            SpatialDomain::Box { lo, hi } => (hi - lo).product(),
        }
    }

    pub fn surface_area(&self) -> f64 {
        match self {
            SpatialDomain::Ball { radius, .. } => 4.0 * PI * radius * radius,
            SpatialDomain::Box { lo, hi } => {
                let d = hi - lo;
                2.0 * (d.x * d.y + d.y * d.z + d.x * d.z)
            }
        }
    }

    /// Length scale used for relative tolerances.
    pub fn scale(&self) -> f64 {
        self.diameter().max(1e-300)
    }

    /// Number of box faces within `tol` of `x` (0 for balls).
    fn faces_near(&self, x: &Vec3, tol: f64) -> usize {
        match self {
            SpatialDomain::Ball { .. } => 0,
            SpatialDomain::Box { lo, hi } => {
                (0..3).map(|a| ((x[a] - lo[a]).abs() <= tol) as usize + ((x[a] - hi[a]).abs() <= tol) as usize).sum()
            }
        }
    }

    /// Exit time of the straight ray `x + s·d`, `s ≥ 0`.
    fn ray_exit(&self, x: &Vec3, d: &Vec3) -> f64 {
        match self {
            SpatialDomain::Ball { center, radius } => {
                let r = x - center;
                let b = r.dot(d);
                let c = r.norm_squared() - radius * radius;
                let a = d.norm_squared();
                let disc = (b * b - a * c).max(0.0);
                // larger root; stable form when b < 0
                let s = if b <= 0.0 { (-b + disc.sqrt()) / a } else { -c / (b + disc.sqrt()) };
                s.max(0.0)
            }
            SpatialDomain::Box { lo, hi } => {
                let mut s = f64::INFINITY;
                for a in 0..3 {
                    if d[a] > 0.0 {
                        s = s.min((hi[a] - x[a]) / d[a]);
                    } else if d[a] < 0.0 {
                        s = s.min((lo[a] - x[a]) / d[a]);
                    }
                }
                s.max(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryClass {
    Inflow,
    Outflow,
    Tangential,
}

/// Default threshold on `|∇_kH·n|` below which a boundary point is tangential.
pub const TANGENTIAL_TOL: f64 = 1e-12;

pub fn classify_with(vf: &VelocityField, x: &Vec3, k: &Vec3, normal: &Vec3, tangential_tol: f64) -> (BoundaryClass, f64) {
    let s = vf.value(x) * k.dot(normal) / k.norm();
    let class = if s.abs() <= tangential_tol {
        BoundaryClass::Tangential
    } else if s > 0.0 {
        BoundaryClass::Outflow
    } else {
        BoundaryClass::Inflow
    };
    (class, s)
}

/// Sign classification of `∇_kH(x, k)·n(x)` at a boundary point.
pub fn classify(
    domain: &SpatialDomain,
    vf: &VelocityField,
    x: &Vec3,
    k: &Vec3,
    event_tol: f64,
) -> Result<BoundaryClass, GeometryError> {
    let sd = domain.signed_distance(x);
    if sd.abs() > event_tol.max(1e-12 * domain.scale()) {
        return Err(GeometryError::NotOnBoundary(sd));
    }
    if k.norm() == 0.0 {
        return Err(FlowError::ZeroMomentum.into());
    }
    Ok(classify_with(vf, x, k, &domain.outward_normal(x), TANGENTIAL_TOL).0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sense {
    Forward,
    Backward,
}

impl Sense {
    fn sign(self) -> f64 {
        match self {
            Sense::Forward => 1.0,
            Sense::Backward => -1.0,
        }
    }
}

/// Flags attached to a boundary exit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExitFlags {
    /// Exit within tolerance of a box edge or corner.
    pub near_edge: bool,
    /// `|∇_kH·n|` at the exit below `1e-6·ν`.
    pub grazing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceOutcome {
    /// Still inside after the full duration.
    Inside(PhasePoint),
    /// Left the domain after `time`; `exit` is the point on the boundary.
    Exited { time: f64, exit: PhasePoint, flags: ExitFlags },
}

/// Traces `p` for `duration` in the given sense, stopping at the boundary.
///
/// Constant velocity is handled in closed form; otherwise fixed steps of at
/// most `h_max` are followed by bisection of the crossing step to `event_tol`.
pub fn trace_in_domain(
    domain: &SpatialDomain,
    vf: &VelocityField,
    p: &PhasePoint,
    duration: f64,
    sense: Sense,
    h_max: f64,
    integrator: Integrator,
    event_tol: f64,
) -> TraceOutcome {
    let sign = sense.sign();
    if vf.is_constant() {
        let v = vf.nu_max();
        let d = p.k * (sign * v / p.k.norm());
        let s = domain.ray_exit(&p.x, &d);
        if s >= duration {
            return TraceOutcome::Inside(PhasePoint::new(p.x + d * duration, p.k));
        }
        let exit = PhasePoint::new(p.x + d * s, p.k);
        return TraceOutcome::Exited { time: s, exit, flags: exit_flags(domain, vf, &exit, event_tol) };
    }
    if duration <= 0.0 {
        return TraceOutcome::Inside(*p);
    }
    let n = ((duration / h_max) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let h = duration / n as f64;
    let mut cur = *p;
    for i in 0..n {
        let next = flow::step(vf, &cur, sign * h, integrator);
        let g_hi = domain.signed_distance(&next.x);
        if g_hi > 0.0 {
            // Illinois iteration on the step fraction, keeping a sign bracket
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            let (mut f_lo, mut f_hi) = (domain.signed_distance(&cur.x).min(0.0), g_hi);
            let mut side = 0i8;
            while (hi - lo) * h > event_tol {
                let mut mid = if f_hi > f_lo { lo - f_lo * (hi - lo) / (f_hi - f_lo) } else { 0.5 * (lo + hi) };
                // keep progress when the secant stalls at an end point
                let margin = 0.25 * event_tol / h;
                if !(mid > lo + margin && mid < hi - margin) {
                    mid = 0.5 * (lo + hi);
                }
                let q = flow::step(vf, &cur, sign * mid * h, integrator);
                let g = domain.signed_distance(&q.x);
                if g > 0.0 {
                    hi = mid;
                    f_hi = g;
                    if side == 1 {
                        f_lo *= 0.5;
                    }
                    side = 1;
                } else {
                    lo = mid;
                    f_lo = g;
                    if side == -1 {
                        f_hi *= 0.5;
                    }
                    side = -1;
                }
            }
            let exit = flow::step(vf, &cur, sign * hi * h, integrator);
            let time = (i as f64 + hi) * h;
            return TraceOutcome::Exited { time, exit, flags: exit_flags(domain, vf, &exit, event_tol) };
        }
        cur = next;
    }
    TraceOutcome::Inside(cur)
}

fn exit_flags(domain: &SpatialDomain, vf: &VelocityField, exit: &PhasePoint, event_tol: f64) -> ExitFlags {
    let tol = (100.0 * event_tol).max(1e-9 * domain.scale());
    let near_edge = domain.faces_near(&exit.x, tol) >= 2;
    let n = domain.outward_normal(&exit.x);
    let c = exit.k.dot(&n) / exit.k.norm();
    let grazing = c.abs() * vf.value(&exit.x) < 1e-6 * vf.nu_min();
    ExitFlags { near_edge, grazing }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TravelTime {
    Finite { time: f64, exit: PhasePoint, flags: ExitFlags },
    /// No exit before the horizon.
    Horizon { horizon: f64 },
}

impl TravelTime {
    pub fn time(&self) -> f64 {
        match self {
            TravelTime::Finite { time, .. } => *time,
            TravelTime::Horizon { horizon } => *horizon,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, TravelTime::Finite { .. })
    }
}

/// `10·diam/ν_min`.
pub fn default_horizon(domain: &SpatialDomain, vf: &VelocityField) -> f64 {
    10.0 * domain.diameter() / vf.nu_min()
}

/// `τ±(p)` for a point in the closed domain.
pub fn travel_time(
    domain: &SpatialDomain,
    vf: &VelocityField,
    p: &PhasePoint,
    sense: Sense,
    cfg: &FlowConfig,
    horizon: Option<f64>,
) -> Result<TravelTime, GeometryError> {
    if p.k.norm() == 0.0 {
        return Err(FlowError::ZeroMomentum.into());
    }
    let sd = domain.signed_distance(&p.x);
    if sd > cfg.event_tol.max(1e-12 * domain.scale()) {
        return Err(GeometryError::OutsideDomain(sd));
    }
    let horizon = horizon.unwrap_or_else(|| default_horizon(domain, vf));
    // already on the boundary and leaving in this sense
    let on_boundary = sd >= -cfg.event_tol.max(1e-12 * domain.scale());
    if on_boundary && sense.sign() * p.k.dot(&domain.outward_normal(&p.x)) > 0.0 {
        return Ok(TravelTime::Finite { time: 0.0, exit: *p, flags: exit_flags(domain, vf, p, cfg.event_tol) });
    }
    Ok(match trace_in_domain(domain, vf, p, horizon, sense, cfg.dt_base, cfg.integrator, cfg.event_tol) {
        TraceOutcome::Inside(_) => TravelTime::Horizon { horizon },
        TraceOutcome::Exited { time, exit, flags } => TravelTime::Finite { time, exit, flags },
    })
}

/// Shell radii and a product Gauss × uniform direction rule.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumGrid {
    radii: Vec<f64>,
    radial_weights: Vec<f64>,
    polar: Vec<f64>,
    polar_weights: Vec<f64>,
    n_azimuth: usize,
    directions: Vec<Vec3>,
    direction_weights: Vec<f64>,
}

impl MomentumGrid {
    /// Explicit shells with radial weights (`dr` measure).
    pub fn new(radii: Vec<f64>, radial_weights: Vec<f64>, n_polar: usize, n_azimuth: usize) -> Result<Self, GeometryError> {
        if radii.is_empty() || radii.len() != radial_weights.len() {
            return Err(GeometryError::InvalidGrid("need one radial weight per shell".into()));
        }
        if radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(GeometryError::InvalidGrid("shell radii must be positive".into()));
        }
        if radii.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GeometryError::InvalidGrid("shell radii must increase".into()));
        }
        if n_polar == 0 || n_azimuth == 0 {
            return Err(GeometryError::InvalidGrid("direction counts must be positive".into()));
        }
        let (polar, polar_weights) = gauss_legendre(n_polar);
        let dphi = 2.0 * PI / n_azimuth as f64;
        let mut directions = Vec::with_capacity(n_polar * n_azimuth);
        let mut direction_weights = Vec::with_capacity(n_polar * n_azimuth);
        for (mu, wmu) in polar.iter().zip(&polar_weights) {
            let st = (1.0 - mu * mu).max(0.0).sqrt();
            for j in 0..n_azimuth {
                let phi = (j as f64 + 0.5) * dphi;
                directions.push(Vec3::new(st * phi.cos(), st * phi.sin(), *mu));
                direction_weights.push(wmu * dphi);
            }
        }
        Ok(MomentumGrid { radii, radial_weights, polar, polar_weights, n_azimuth, directions, direction_weights })
    }

    /// Gauss–Legendre shells on `[k_lo, k_hi]`.
    pub fn gauss_shells(k_lo: f64, k_hi: f64, n_shells: usize, n_polar: usize, n_azimuth: usize) -> Result<Self, GeometryError> {
        if !(k_lo > 0.0 && k_hi > k_lo) || n_shells == 0 {
            return Err(GeometryError::InvalidGrid(format!("bad shell range [{k_lo}, {k_hi}] x {n_shells}")));
        }
        let (r, w) = gauss_legendre_on(n_shells, k_lo, k_hi);
        Self::new(r, w, n_polar, n_azimuth)
    }

    /// Single shell of radius `r` with unit radial weight.
    pub fn single_shell(r: f64, n_polar: usize, n_azimuth: usize) -> Result<Self, GeometryError> {
        Self::new(vec![r], vec![1.0], n_polar, n_azimuth)
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn radial_weights(&self) -> &[f64] {
        &self.radial_weights
    }

    pub fn n_shells(&self) -> usize {
        self.radii.len()
    }

    pub fn n_polar(&self) -> usize {
        self.polar.len()
    }

    pub fn n_azimuth(&self) -> usize {
        self.n_azimuth
    }

    pub fn n_directions(&self) -> usize {
        self.directions.len()
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.directions
    }

    pub fn direction_weights(&self) -> &[f64] {
        &self.direction_weights
    }

    pub fn polar_nodes(&self) -> &[f64] {
        &self.polar
    }

    pub fn polar_weights(&self) -> &[f64] {
        &self.polar_weights
    }

    /// `r²·w_r` for the phase-space measure `dk = r² dr dΩ`.
    pub fn shell_measure(&self, shell: usize) -> f64 {
        self.radii[shell].powi(2) * self.radial_weights[shell]
    }

    /// Bilinear stencil in `(μ, φ)`: periodic in `φ`, clamped in `μ`.
    pub fn direction_stencil(&self, d: &Vec3) -> ([(usize, f64); 4], usize) {
        let n = d.norm();
        let mu = (d.z / n).clamp(-1.0, 1.0);
        let np = self.polar.len();
        let na = self.n_azimuth;
        let (rows, nrows): ([(usize, f64); 2], usize) = if np == 1 || mu <= self.polar[0] {
            ([(0, 1.0), (0, 0.0)], 1)
        } else if mu >= self.polar[np - 1] {
            ([(np - 1, 1.0), (0, 0.0)], 1)
        } else {
            let i = self.polar.partition_point(|m| *m <= mu) - 1;
            let f = (mu - self.polar[i]) / (self.polar[i + 1] - self.polar[i]);
            ([(i, 1.0 - f), (i + 1, f)], 2)
        };
        let (cols, ncols): ([(usize, f64); 2], usize) = if na == 1 {
            ([(0, 1.0), (0, 0.0)], 1)
        } else {
            let mut phi = d.y.atan2(d.x);
            if phi < 0.0 {
                phi += 2.0 * PI;
            }
            let s = phi * na as f64 / (2.0 * PI) - 0.5;
            let fl = s.floor();
            let f = s - fl;
            let j0 = (fl as i64).rem_euclid(na as i64) as usize;
            ([(j0, 1.0 - f), ((j0 + 1) % na, f)], 2)
        };
        let mut out = [(0usize, 0.0f64); 4];
        let mut len = 0;
        for &(r, wr) in &rows[..nrows] {
            for &(c, wc) in &cols[..ncols] {
                out[len] = (r * na + c, wr * wc);
                len += 1;
            }
        }
        (out, len)
    }

    /// Linear stencil in `|k|`, clamped to the shell range.
    pub fn shell_stencil(&self, kn: f64) -> ([(usize, f64); 2], usize) {
        let r = &self.radii;
        let n = r.len();
        if n == 1 || kn <= r[0] {
            ([(0, 1.0), (0, 0.0)], 1)
        } else if kn >= r[n - 1] {
            ([(n - 1, 1.0), (0, 0.0)], 1)
        } else {
            let i = r.partition_point(|x| *x <= kn) - 1;
            let f = (kn - r[i]) / (r[i + 1] - r[i]);
            ([(i, 1.0 - f), (i + 1, f)], 2)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpolationOrder {
    Linear,
    Cubic,
}

impl InterpolationOrder {
    pub fn from_int(order: u32) -> Option<Self> {
        match order {
            1 => Some(InterpolationOrder::Linear),
            3 => Some(InterpolationOrder::Cubic),
            _ => None,
        }
    }
}

/// Spatial interpolation stencil over active lattice nodes.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub nodes: [u32; 64],
    pub weights: [f64; 64],
    pub len: usize,
    /// The renormalized trilinear stencil was empty and a nearest-node fallback was used.
    pub clamped: bool,
}

impl Stencil {
    fn empty() -> Self {
        Stencil { nodes: [0; 64], weights: [0.0; 64], len: 0, clamped: false }
    }

    fn push(&mut self, node: u32, w: f64) {
        self.nodes[self.len] = node;
        self.weights[self.len] = w;
        self.len += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes[..self.len].iter().zip(&self.weights[..self.len]).map(|(n, w)| (*n as usize, *w))
    }
}

const INACTIVE: u32 = u32::MAX;

fn cubic_weights(f: f64) -> [f64; 4] {
    [
        -f * (f - 1.0) * (f - 2.0) / 6.0,
        (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0,
        -(f + 1.0) * f * (f - 2.0) / 2.0,
        (f + 1.0) * f * (f - 1.0) / 6.0,
    ]
}

/// Node-centred lattice over the bounding box; nodes inside the closed domain are active.
#[derive(Debug, Clone)]
pub struct SpatialLattice {
    lo: Vec3,
    spacing: Vec3,
    cells: [usize; 3],
    /// lattice node → active index
    map: Vec<u32>,
    active: Vec<usize>,
    positions: Vec<Vec3>,
    weights: Vec<f64>,
}

impl SpatialLattice {
    /// `cells` cells per axis over the bounding box of `domain`.
    pub fn new(domain: &SpatialDomain, cells: usize) -> Result<Self, GeometryError> {
        if cells == 0 {
            return Err(GeometryError::InvalidGrid("spatial lattice needs at least one cell".into()));
        }
        let (lo, hi) = domain.bounding_box();
        let spacing = (hi - lo) / cells as f64;
        let dims = cells + 1;
        let tol = 1e-12 * domain.scale();
        let mut map = vec![INACTIVE; dims * dims * dims];
        let mut active = Vec::new();
        let mut positions = Vec::new();
        for i in 0..dims {
            for j in 0..dims {
                for k in 0..dims {
                    let x = lo + Vec3::new(i as f64 * spacing.x, j as f64 * spacing.y, k as f64 * spacing.z);
                    let x = Vec3::new(
                        if i == cells { hi.x } else { x.x },
                        if j == cells { hi.y } else { x.y },
                        if k == cells { hi.z } else { x.z },
                    );
                    if domain.signed_distance(&x) <= tol {
                        let l = (i * dims + j) * dims + k;
                        map[l] = active.len() as u32;
                        active.push(l);
                        positions.push(x);
                    }
                }
            }
        }
        if active.is_empty() {
            return Err(GeometryError::InvalidGrid("no lattice node inside the domain".into()));
        }
        let mut lat = SpatialLattice {
            lo,
            spacing,
            cells: [cells; 3],
            map,
            active,
            positions,
            weights: Vec::new(),
        };
        lat.weights = lat.compute_weights(domain);
        Ok(lat)
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    pub fn cells(&self) -> [usize; 3] {
        self.cells
    }

    pub fn lo(&self) -> Vec3 {
        self.lo
    }

    pub fn spacing(&self) -> Vec3 {
        self.spacing
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.min()
    }

    pub fn position(&self, node: usize) -> Vec3 {
        self.positions[node]
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    /// Quadrature weight of an active node.
    pub fn weight(&self, node: usize) -> f64 {
        self.weights[node]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Lattice indices `(i, j, k)` of an active node.
    pub fn lattice_index(&self, node: usize) -> [usize; 3] {
        let d = self.cells[0] + 1;
        let l = self.active[node];
        [l / (d * d), (l / d) % d, l % d]
    }

    fn lookup(&self, i: i64, j: i64, k: i64) -> u32 {
        let d = (self.cells[0] + 1) as i64;
        if i < 0 || j < 0 || k < 0 || i >= d || j >= d || k >= d {
            return INACTIVE;
        }
        self.map[((i * d + j) * d + k) as usize]
    }

    fn cell_and_fraction(&self, x: &Vec3) -> ([i64; 3], [f64; 3]) {
        let mut c = [0i64; 3];
        let mut f = [0.0; 3];
        for a in 0..3 {
            let s = (x[a] - self.lo[a]) / self.spacing[a];
            let n = self.cells[a] as i64;
            let ci = (s.floor() as i64).clamp(0, n - 1);
            c[a] = ci;
            f[a] = (s - ci as f64).clamp(0.0, 1.0);
        }
        (c, f)
    }

    /// Trilinear weights over active corners, renormalized; falls back to the
    /// nearest active node when no active corner carries weight.
    pub fn stencil(&self, x: &Vec3, order: InterpolationOrder) -> Stencil {
        let (c, f) = self.cell_and_fraction(x);
        if order == InterpolationOrder::Cubic {
            if let Some(s) = self.cubic_stencil(c, f) {
                return s;
            }
        }
        let mut s = Stencil::empty();
        let mut total = 0.0;
        for di in 0..2 {
            let wi = if di == 0 { 1.0 - f[0] } else { f[0] };
            for dj in 0..2 {
                let wj = if dj == 0 { 1.0 - f[1] } else { f[1] };
                for dk in 0..2 {
                    let wk = if dk == 0 { 1.0 - f[2] } else { f[2] };
                    let w = wi * wj * wk;
                    if w <= 0.0 {
                        continue;
                    }
                    let n = self.lookup(c[0] + di, c[1] + dj, c[2] + dk);
                    if n != INACTIVE {
                        s.push(n, w);
                        total += w;
                    }
                }
            }
        }
        if total > 1e-12 {
            for w in &mut s.weights[..s.len] {
                *w /= total;
            }
            return s;
        }
        let mut s = Stencil::empty();
        s.clamped = true;
        s.push(self.nearest_active(x, c) as u32, 1.0);
        s
    }

    fn cubic_stencil(&self, c: [i64; 3], f: [f64; 3]) -> Option<Stencil> {
        let n = self.cells[0] as i64;
        if (0..3).any(|a| c[a] < 1 || c[a] + 2 > n) {
            return None;
        }
        let (wx, wy, wz) = (cubic_weights(f[0]), cubic_weights(f[1]), cubic_weights(f[2]));
        let mut s = Stencil::empty();
        for (a, wa) in wx.iter().enumerate() {
            for (b, wb) in wy.iter().enumerate() {
                for (g, wg) in wz.iter().enumerate() {
                    let node = self.lookup(c[0] + a as i64 - 1, c[1] + b as i64 - 1, c[2] + g as i64 - 1);
                    if node == INACTIVE {
                        return None;
                    }
                    s.push(node, wa * wb * wg);
                }
            }
        }
        Some(s)
    }

    fn nearest_active(&self, x: &Vec3, c: [i64; 3]) -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        for di in -1..3 {
            for dj in -1..3 {
                for dk in -1..3 {
                    let n = self.lookup(c[0] + di, c[1] + dj, c[2] + dk);
                    if n != INACTIVE {
                        let d = (self.positions[n as usize] - x).norm_squared();
                        if d < best.0 {
                            best = (d, n as usize);
                        }
                    }
                }
            }
        }
        if best.1 != usize::MAX {
            return best.1;
        }
        self.positions
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - x).norm_squared(), i))
            .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
            .1
    }

    /// Integral of each node's (renormalized) trilinear basis over the domain.
    fn compute_weights(&self, domain: &SpatialDomain) -> Vec<f64> {
        const SUB: usize = 8;
        let mut w = vec![0.0; self.active.len()];
        let h = self.spacing;
        let cell_vol = h.x * h.y * h.z;
        let n = self.cells[0] as i64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let corners: Vec<u32> = (0..8)
                        .map(|m| self.lookup(i + (m >> 2) as i64, j + ((m >> 1) & 1) as i64, k + (m & 1) as i64))
                        .collect();
                    if corners.iter().all(|c| *c != INACTIVE) {
                        // convex domain: cell entirely inside
                        for c in corners {
                            w[c as usize] += 0.125 * cell_vol;
                        }
                        continue;
                    }
                    let base = self.lo + Vec3::new(i as f64 * h.x, j as f64 * h.y, k as f64 * h.z);
                    let sv = cell_vol / (SUB * SUB * SUB) as f64;
                    for a in 0..SUB {
                        for b in 0..SUB {
                            for g in 0..SUB {
                                let x = base
                                    + Vec3::new(
                                        (a as f64 + 0.5) / SUB as f64 * h.x,
                                        (b as f64 + 0.5) / SUB as f64 * h.y,
                                        (g as f64 + 0.5) / SUB as f64 * h.z,
                                    );
                                if domain.signed_distance(&x) > 0.0 {
                                    continue;
                                }
                                let s = self.stencil(&x, InterpolationOrder::Linear);
                                for (node, wt) in s.iter() {
                                    w[node] += sv * wt;
                                }
                            }
                        }
                    }
                }
            }
        }
        w
    }
}

/// Tensor product of a spatial lattice and a momentum grid.
#[derive(Debug, Clone)]
pub struct PhaseGrid {
    pub domain: SpatialDomain,
    pub lattice: SpatialLattice,
    pub momentum: MomentumGrid,
}

impl PhaseGrid {
    pub fn new(domain: SpatialDomain, cells: usize, momentum: MomentumGrid) -> Result<Self, GeometryError> {
        let lattice = SpatialLattice::new(&domain, cells)?;
        Ok(PhaseGrid { domain, lattice, momentum })
    }

    pub fn n_space(&self) -> usize {
        self.lattice.n_active()
    }

    pub fn n_shells(&self) -> usize {
        self.momentum.n_shells()
    }

    pub fn n_directions(&self) -> usize {
        self.momentum.n_directions()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_space() * self.n_shells() * self.n_directions()
    }

    #[inline]
    pub fn node_index(&self, space: usize, shell: usize, dir: usize) -> usize {
        (space * self.n_shells() + shell) * self.n_directions() + dir
    }

    /// `(space, shell, dir)` of a flat node index.
    #[inline]
    pub fn split_index(&self, node: usize) -> (usize, usize, usize) {
        let nd = self.n_directions();
        let ns = self.n_shells();
        (node / (nd * ns), (node / nd) % ns, node % nd)
    }

    pub fn phase_point(&self, node: usize) -> PhasePoint {
        let (s, r, d) = self.split_index(node);
        PhasePoint::new(self.lattice.position(s), self.momentum.directions()[d] * self.momentum.radii()[r])
    }

    pub fn weight(&self, node: usize) -> f64 {
        let (s, r, d) = self.split_index(node);
        self.lattice.weight(s) * self.momentum.shell_measure(r) * self.momentum.direction_weights()[d]
    }

    /// Quadrature weights of all nodes, in node order.
    pub fn weights(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|n| self.weight(n)).collect()
    }

    /// Interpolates node values at `p`; the flag reports a clamped stencil.
    pub fn interpolate<T: FieldValue>(&self, values: &[T], p: &PhasePoint, order: InterpolationOrder) -> (T, bool) {
        let st = self.lattice.stencil(&p.x, order);
        let (sh, nsh) = self.momentum.shell_stencil(p.k.norm());
        let (dirs, nd) = self.momentum.direction_stencil(&p.k);
        let mut acc = T::default();
        for (s, ws) in st.iter() {
            for &(r, wr) in &sh[..nsh] {
                let base = self.node_index(s, r, 0);
                let w = ws * wr;
                for &(d, wd) in &dirs[..nd] {
                    acc = acc + values[base + d] * (w * wd);
                }
            }
        }
        (acc, st.clamped)
    }

    /// Interpolation with spatial stencil fixed and momentum given by shell/direction stencils.
    pub(crate) fn interpolate_parts<T: FieldValue>(
        &self,
        values: &[T],
        st: &Stencil,
        sh: &[(usize, f64)],
        dirs: &[(usize, f64)],
    ) -> T {
        let mut acc = T::default();
        for (s, ws) in st.iter() {
            for &(r, wr) in sh {
                let base = self.node_index(s, r, 0);
                let w = ws * wr;
                for &(d, wd) in dirs {
                    acc = acc + values[base + d] * (w * wd);
                }
            }
        }
        acc
    }
}

/// Values that can be interpolated on a [`PhaseGrid`].
pub trait FieldValue:
    Copy + Default + Send + Sync + std::ops::Add<Output = Self> + std::ops::Mul<f64, Output = Self>
{
}

impl FieldValue for f64 {}
impl FieldValue for CoherenceMatrix {}

/// A boundary node `(x, k)` with its measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub x: Vec3,
    pub k: Vec3,
    pub normal: Vec3,
    pub class: BoundaryClass,
    /// `|∇_kH(x, k)·n(x)|`, zero on tangential points.
    pub flux_weight: f64,
    /// Surface weight times `r²·w_r·w_dir`.
    pub measure: f64,
    pub surface: usize,
    pub shell: usize,
    pub dir: usize,
}

impl BoundaryPoint {
    pub fn weight(&self) -> f64 {
        self.measure * self.flux_weight
    }

    pub fn phase_point(&self) -> PhasePoint {
        PhasePoint::new(self.x, self.k)
    }
}

/// Surface node with outward normal and area weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceNode {
    pub x: Vec3,
    pub normal: Vec3,
    pub area: f64,
}

/// Surface nodes: Gauss × uniform on spheres, per-face trapezoid grids on boxes.
pub fn surface_nodes(domain: &SpatialDomain, resolution: usize) -> Vec<SurfaceNode> {
    let res = resolution.max(1);
    match domain {
        SpatialDomain::Ball { center, radius } => {
            let (mu, wmu) = gauss_legendre(res);
            let nphi = 2 * res;
            let dphi = 2.0 * PI / nphi as f64;
            let mut out = Vec::with_capacity(res * nphi);
            for (m, w) in mu.iter().zip(&wmu) {
                let st = (1.0 - m * m).max(0.0).sqrt();
                for j in 0..nphi {
                    let phi = (j as f64 + 0.5) * dphi;
                    let n = Vec3::new(st * phi.cos(), st * phi.sin(), *m);
                    out.push(SurfaceNode { x: center + n * *radius, normal: n, area: radius * radius * w * dphi });
                }
            }
            out
        }
        SpatialDomain::Box { lo, hi } => {
            let mut out = Vec::new();
            for a in 0..3 {
                let (b, c) = ((a + 1) % 3, (a + 2) % 3);
                let wb = trapezoid_weights(res, lo[b], hi[b]);
                let wc = trapezoid_weights(res, lo[c], hi[c]);
                for (side, level) in [(-1.0, lo[a]), (1.0, hi[a])] {
                    let mut n = Vec3::zeros();
                    n[a] = side;
                    for (ib, w1) in wb.iter().enumerate() {
                        for (ic, w2) in wc.iter().enumerate() {
                            let mut x = Vec3::zeros();
                            x[a] = level;
                            x[b] = if ib == res { hi[b] } else { lo[b] + (hi[b] - lo[b]) * ib as f64 / res as f64 };
                            x[c] = if ic == res { hi[c] } else { lo[c] + (hi[c] - lo[c]) * ic as f64 / res as f64 };
                            out.push(SurfaceNode { x, normal: n, area: w1 * w2 });
                        }
                    }
                }
            }
            out
        }
    }
}

/// Quadrature over `∂X × K` carrying the `|∇_kH·n|` weight.
#[derive(Debug, Clone)]
pub struct BoundaryQuadrature {
    pub surface: Vec<SurfaceNode>,
    pub points: Vec<BoundaryPoint>,
    n_shells: usize,
    n_dirs: usize,
}

impl BoundaryQuadrature {
    pub fn points_on(&self, class: BoundaryClass) -> impl Iterator<Item = &BoundaryPoint> {
        self.points.iter().filter(move |p| p.class == class)
    }

    pub fn total_weight(&self, class: BoundaryClass) -> f64 {
        self.points_on(class).map(|p| p.weight()).sum()
    }

    pub fn n_shells(&self) -> usize {
        self.n_shells
    }

    pub fn n_directions(&self) -> usize {
        self.n_dirs
    }

    /// Index of the point for `(surface, shell, dir)`.
    pub fn index(&self, surface: usize, shell: usize, dir: usize) -> usize {
        (surface * self.n_shells + shell) * self.n_dirs + dir
    }
}

pub fn boundary_quadrature(
    domain: &SpatialDomain,
    vf: &VelocityField,
    momentum: &MomentumGrid,
    resolution: usize,
) -> Result<BoundaryQuadrature, GeometryError> {
    if resolution == 0 {
        return Err(GeometryError::InvalidArgument("surface resolution must be positive".into()));
    }
    let surface = surface_nodes(domain, resolution);
    let mut points = Vec::with_capacity(surface.len() * momentum.n_shells() * momentum.n_directions());
    for (si, sn) in surface.iter().enumerate() {
        let nu = vf.value(&sn.x);
        for r in 0..momentum.n_shells() {
            let rad = momentum.radii()[r];
            for (d, dir) in momentum.directions().iter().enumerate() {
                let s = nu * dir.dot(&sn.normal);
                let class = if s.abs() <= TANGENTIAL_TOL {
                    BoundaryClass::Tangential
                } else if s > 0.0 {
                    BoundaryClass::Outflow
                } else {
                    BoundaryClass::Inflow
                };
                let flux_weight = if class == BoundaryClass::Tangential { 0.0 } else { s.abs() };
                points.push(BoundaryPoint {
                    x: sn.x,
                    k: dir * rad,
                    normal: sn.normal,
                    class,
                    flux_weight,
                    measure: sn.area * momentum.shell_measure(r) * momentum.direction_weights()[d],
                    surface: si,
                    shell: r,
                    dir: d,
                });
            }
        }
    }
    Ok(BoundaryQuadrature { surface, points, n_shells: momentum.n_shells(), n_dirs: momentum.n_directions() })
}

/// `τ₊` at every inflow point (0 elsewhere), horizon-capped.
pub fn inflow_travel_times(
    domain: &SpatialDomain,
    vf: &VelocityField,
    bq: &BoundaryQuadrature,
    cfg: &FlowConfig,
) -> Vec<f64> {
    let horizon = default_horizon(domain, vf);
    bq.points
        .par_iter()
        .map(|p| {
            if p.class != BoundaryClass::Inflow {
                return 0.0;
            }
            let unit = PhasePoint::new(p.x, p.k / p.k.norm());
            match trace_in_domain(domain, vf, &unit, horizon, Sense::Forward, cfg.dt_base, cfg.integrator, cfg.event_tol) {
                TraceOutcome::Inside(_) => horizon,
                TraceOutcome::Exited { time, .. } => time,
            }
        })
        .collect()
}

/// `(∫_{Γ₋} ‖g‖_p^p τ_κ |∇_kH·n| dΓ)^{1/p}` with precomputed `τ₊`.
pub fn trace_norm_with(
    bq: &BoundaryQuadrature,
    tau_plus: &[f64],
    g: impl Fn(&BoundaryPoint) -> CoherenceMatrix,
    p: f64,
    kappa: f64,
) -> Result<f64, GeometryError> {
    if p.is_nan() || p < 1.0 {
        return Err(GeometryError::InvalidArgument(format!("trace norm needs p ≥ 1, got {p}")));
    }
    if !(kappa > 0.0) {
        return Err(GeometryError::InvalidArgument(format!("κ must be positive, got {kappa}")));
    }
    let mut acc = 0.0;
    for (pt, tau) in bq.points.iter().zip(tau_plus) {
        if pt.class != BoundaryClass::Inflow {
            continue;
        }
        acc += g(pt).schatten_pow(p) * tau.min(kappa) * pt.weight();
    }
    Ok(acc.powf(1.0 / p))
}

pub fn trace_norm(
    domain: &SpatialDomain,
    vf: &VelocityField,
    bq: &BoundaryQuadrature,
    g: impl Fn(&BoundaryPoint) -> CoherenceMatrix,
    p: f64,
    kappa: f64,
    cfg: &FlowConfig,
) -> Result<f64, GeometryError> {
    let taus = inflow_travel_times(domain, vf, bq, cfg);
    trace_norm_with(bq, &taus, g, p, kappa)
}

/// Resolutions for [`boundary_transform_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformResolution {
    pub spatial_cells: usize,
    pub shells: usize,
    pub boundary_shells: usize,
    pub n_polar: usize,
    pub n_azimuth: usize,
    pub surface: usize,
    /// Time step of the trajectory quadrature.
    pub dt: f64,
}

impl Default for TransformResolution {
    fn default() -> Self {
        TransformResolution { spatial_cells: 24, shells: 6, boundary_shells: 10, n_polar: 12, n_azimuth: 24, surface: 16, dt: 0.04 }
    }
}

/// Both sides of `∫_U f dx dk = ∫_{Γ₋} ∫₀^{τ₊} f(φ_t) dt |∇_kH·n| dΓ`.
///
/// `k_support = (a, b)` must contain the `|k|`-support of `f`.
pub fn boundary_transform_check(
    domain: &SpatialDomain,
    vf: &VelocityField,
    f: &(dyn Fn(&PhasePoint) -> f64 + Sync),
    k_support: (f64, f64),
    res: &TransformResolution,
    cfg: &FlowConfig,
) -> Result<(f64, f64), GeometryError> {
    let (ka, kb) = k_support;
    let bulk = MomentumGrid::gauss_shells(ka, kb, res.shells, res.n_polar, res.n_azimuth)?;
    let grid = PhaseGrid::new(domain.clone(), res.spatial_cells, bulk)?;
    let lhs = crate::diagnostics::fixed_sum(grid.n_nodes(), |n| f(&grid.phase_point(n)) * grid.weight(n));

    // boundary |k| range covering every characteristic that meets the support
    let ratio = vf.nu_min() / vf.nu_max();
    let edge = MomentumGrid::gauss_shells(ka * ratio, kb / ratio, res.boundary_shells, res.n_polar, res.n_azimuth)?;
    let bq = boundary_quadrature(domain, vf, &edge, res.surface)?;
    let horizon = default_horizon(domain, vf);
    let nd = edge.n_directions();
    let ns = edge.n_shells();
    let per_node: Vec<f64> = bq
        .surface
        .par_iter()
        .enumerate()
        .map(|(si, _)| {
            let mut acc = 0.0;
            for d in 0..nd {
                let first = bq.points[bq.index(si, 0, d)];
                if first.class != BoundaryClass::Inflow {
                    continue;
                }
                // unit-|k| trajectory; other shells follow by scaling k
                let traj = sample_to_exit(domain, vf, &PhasePoint::new(first.x, first.k / first.k.norm()), horizon, res.dt, cfg);
                for r in 0..ns {
                    let pt = &bq.points[bq.index(si, r, d)];
                    let rad = edge.radii()[r];
                    let fv = |q: &PhasePoint| f(&PhasePoint::new(q.x, q.k * rad));
                    // Simpson on each (start, mid, end) triple
                    let vals: Vec<f64> = traj.iter().map(|(_, q)| fv(q)).collect();
                    let mut integral = 0.0;
                    for j in (0..traj.len() - 2).step_by(2) {
                        integral += (traj[j + 2].0 - traj[j].0) / 6.0 * (vals[j] + 4.0 * vals[j + 1] + vals[j + 2]);
                    }
                    acc += integral * pt.weight();
                }
            }
            acc
        })
        .collect();
    let rhs = per_node.iter().sum();
    Ok((lhs, rhs))
}

/// Samples `(t, φ_t(p))` at the ends and midpoints of steps of length `dt`
/// until the forward exit; the last step is shortened to end on the boundary.
fn sample_to_exit(
    domain: &SpatialDomain,
    vf: &VelocityField,
    p: &PhasePoint,
    horizon: f64,
    dt: f64,
    cfg: &FlowConfig,
) -> Vec<(f64, PhasePoint)> {
    let trace = |q: &PhasePoint, h: f64| {
        trace_in_domain(domain, vf, q, h, Sense::Forward, cfg.dt_base.min(h), cfg.integrator, cfg.event_tol)
    };
    let mut out = vec![(0.0, *p)];
    let mut cur = *p;
    let mut t = 0.0;
    while t < horizon {
        let short = |len: f64, exit: PhasePoint| {
            let mid = match trace(&cur, 0.5 * len) {
                TraceOutcome::Inside(q) => q,
                TraceOutcome::Exited { exit, .. } => exit,
            };
            [(t + 0.5 * len, mid), (t + len, exit)]
        };
        match trace(&cur, 0.5 * dt) {
            TraceOutcome::Exited { time, exit, .. } => {
                out.extend(short(time, exit));
                break;
            }
            TraceOutcome::Inside(mid) => match trace(&mid, 0.5 * dt) {
                TraceOutcome::Exited { time, exit, .. } => {
                    out.extend(short(0.5 * dt + time, exit));
                    break;
                }
                TraceOutcome::Inside(end) => {
                    out.push((t + 0.5 * dt, mid));
                    t += dt;
                    out.push((t, end));
                    cur = end;
                }
            },
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_travel_times() {
        let d = SpatialDomain::unit_box();
        let vf = VelocityField::constant(1.0).unwrap();
        let p = PhasePoint::new(Vec3::repeat(0.5), Vec3::new(0.0, 0.0, 1.0));
        let cfg = FlowConfig::default();
        let tp = travel_time(&d, &vf, &p, Sense::Forward, &cfg, None).unwrap();
        let tm = travel_time(&d, &vf, &p, Sense::Backward, &cfg, None).unwrap();
        assert!((tp.time() - 0.5).abs() < 1e-15);
        assert!((tm.time() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ball_travel_time_speed_two() {
        let d = SpatialDomain::ball(Vec3::zeros(), 1.0).unwrap();
        let vf = VelocityField::constant(2.0).unwrap();
        let p = PhasePoint::new(Vec3::zeros(), Vec3::new(0.3, -0.2, 0.9));
        let t = travel_time(&d, &vf, &p, Sense::Forward, &FlowConfig::default(), None).unwrap();
        assert!((t.time() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn classify_examples() {
        let d = SpatialDomain::ball(Vec3::zeros(), 1.0).unwrap();
        let vf = VelocityField::constant(1.0).unwrap();
        let x = Vec3::new(1.0, 0.0, 0.0);
        assert_eq!(classify(&d, &vf, &x, &Vec3::new(2.0, 0.0, 0.0), 1e-10).unwrap(), BoundaryClass::Outflow);
        assert_eq!(classify(&d, &vf, &x, &Vec3::new(-1.0, 0.0, 0.0), 1e-10).unwrap(), BoundaryClass::Inflow);
        assert_eq!(classify(&d, &vf, &x, &Vec3::new(0.0, 1.0, 0.0), 1e-10).unwrap(), BoundaryClass::Tangential);
        assert!(matches!(
            classify(&d, &vf, &Vec3::zeros(), &Vec3::x(), 1e-10),
            Err(GeometryError::NotOnBoundary(_))
        ));
    }

    #[test]
    fn direction_weights_sum_to_sphere_area() {
        let m = MomentumGrid::single_shell(1.0, 8, 16).unwrap();
        let s: f64 = m.direction_weights().iter().sum();
        assert!((s - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn box_lattice_weights_are_trapezoid() {
        let d = SpatialDomain::unit_box();
        let lat = SpatialLattice::new(&d, 4).unwrap();
        assert_eq!(lat.n_active(), 125);
        let total: f64 = lat.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert!((lat.weight(0) - 1.0 / 512.0).abs() < 1e-16);
    }

    #[test]
    fn ball_lattice_volume() {
        let d = SpatialDomain::ball(Vec3::zeros(), 1.0).unwrap();
        let lat = SpatialLattice::new(&d, 16).unwrap();
        let total: f64 = lat.weights().iter().sum();
        assert!((total - d.volume()).abs() < 2e-3 * d.volume(), "{total}");
    }

    #[test]
    fn stencil_reproduces_linear_functions() {
        let d = SpatialDomain::unit_box();
        let lat = SpatialLattice::new(&d, 5).unwrap();
        let x = Vec3::new(0.37, 0.52, 0.91);
        for order in [InterpolationOrder::Linear, InterpolationOrder::Cubic] {
            let s = lat.stencil(&x, order);
            let v: f64 = s.iter().map(|(n, w)| w * (lat.position(n).dot(&Vec3::new(1.0, -2.0, 0.5)) + 3.0)).sum();
            assert!((v - (x.dot(&Vec3::new(1.0, -2.0, 0.5)) + 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn tangential_points_have_zero_weight() {
        let d = SpatialDomain::unit_box();
        let vf = VelocityField::constant(1.0).unwrap();
        let m = MomentumGrid::new(vec![1.0], vec![1.0], 1, 4).unwrap();
        let bq = boundary_quadrature(&d, &vf, &m, 2).unwrap();
        for p in &bq.points {
            if p.class == BoundaryClass::Tangential {
                assert_eq!(p.weight(), 0.0);
            }
        }
    }
}

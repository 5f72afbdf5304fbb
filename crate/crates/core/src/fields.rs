//! Named analytic phase-space fields for initial, source and boundary data.

use std::f64::consts::PI;
use std::fmt::Debug;

use crate::algebra::CoherenceMatrix;
use crate::flow::{PhasePoint, Vec3};
use crate::operators::rotate_qu;

/// A coherence-matrix valued function of `(x, k, t)`.
pub trait PhaseData: Send + Sync + Debug {
    fn value(&self, p: &PhasePoint, t: f64) -> CoherenceMatrix;

    /// True when the value is `⪰ 0` everywhere by construction.
    fn is_positive(&self) -> bool {
        false
    }

    /// True when the value vanishes at `t = 0` by construction.
    fn vanishes_at_start(&self) -> bool {
        false
    }
}

/// Spatial envelope.
#[derive(Debug, Clone, PartialEq)]
pub enum Envelope {
    Uniform,
    /// `(1 − |x − c|²/R²)³` inside the ball, zero outside.
    Bump { center: Vec3, radius: f64 },
    Gaussian { center: Vec3, width: f64 },
}

impl Envelope {
    pub fn value(&self, x: &Vec3) -> f64 {
        match self {
            Envelope::Uniform => 1.0,
            Envelope::Bump { center, radius } => {
                let s = (x - center).norm_squared() / (radius * radius);
                if s >= 1.0 {
                    0.0
                } else {
                    (1.0 - s).powi(3)
                }
            }
            Envelope::Gaussian { center, width } => (-(x - center).norm_squared() / (width * width)).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeProfile {
    Constant,
    /// `sin²(πt/2τ)` up to `τ`, then 1.
    Ramp { rise: f64 },
    /// `sin²(πt/τ)`, periodic.
    Pulse { period: f64 },
}

impl TimeProfile {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::Constant => 1.0,
            TimeProfile::Ramp { rise } => {
                if t <= 0.0 {
                    0.0
                } else if t >= rise {
                    1.0
                } else {
                    (0.5 * PI * t / rise).sin().powi(2)
                }
            }
            TimeProfile::Pulse { period } => {
                if t <= 0.0 {
                    0.0
                } else {
                    (PI * t / period).sin().powi(2)
                }
            }
        }
    }

    pub fn vanishes_at_zero(&self) -> bool {
        !matches!(self, TimeProfile::Constant)
    }
}

/// `time(t)·env(x)·(1 + a k̂·e)·win(|k|)·R(twist·x·e)(I, Q, U, V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticField {
    pub stokes: CoherenceMatrix,
    pub envelope: Envelope,
    pub anisotropy: f64,
    pub axis: Vec3,
    /// Rotation rate of the linear polarization along `axis`.
    pub twist: f64,
    /// Smooth `|k|` window `(a, b)`; `None` for no dependence on `|k|`.
    pub k_window: Option<(f64, f64)>,
    pub time: TimeProfile,
}

impl AnalyticField {
    pub fn zero() -> Self {
        Self::uniform(CoherenceMatrix::ZERO)
    }

    pub fn uniform(stokes: CoherenceMatrix) -> Self {
        AnalyticField {
            stokes,
            envelope: Envelope::Uniform,
            anisotropy: 0.0,
            axis: Vec3::z(),
            twist: 0.0,
            k_window: None,
            time: TimeProfile::Constant,
        }
    }

    pub fn with_envelope(mut self, e: Envelope) -> Self {
        self.envelope = e;
        self
    }

    pub fn with_anisotropy(mut self, a: f64, axis: Vec3) -> Self {
        self.anisotropy = a;
        self.axis = axis.normalize();
        self
    }

    pub fn with_twist(mut self, twist: f64, axis: Vec3) -> Self {
        self.twist = twist;
        self.axis = axis.normalize();
        self
    }

    pub fn with_time(mut self, time: TimeProfile) -> Self {
        self.time = time;
        self
    }

    pub fn with_k_window(mut self, a: f64, b: f64) -> Self {
        self.k_window = Some((a, b));
        self
    }

    pub fn is_zero(&self) -> bool {
        self.stokes == CoherenceMatrix::ZERO
    }
}

/// Smooth window vanishing outside `(a, b)`.
fn k_window(kn: f64, a: f64, b: f64) -> f64 {
    if kn <= a || kn >= b {
        return 0.0;
    }
    let s = (2.0 * kn - a - b) / (b - a);
    (1.0 - s * s).powi(2)
}

impl PhaseData for AnalyticField {
    fn value(&self, p: &PhasePoint, t: f64) -> CoherenceMatrix {
        let tv = self.time.value(t);
        if tv == 0.0 || self.is_zero() {
            return CoherenceMatrix::ZERO;
        }
        let mut s = tv * self.envelope.value(&p.x);
        if self.anisotropy != 0.0 {
            s *= 1.0 + self.anisotropy * p.k.dot(&self.axis) / p.k.norm();
        }
        if let Some((a, b)) = self.k_window {
            s *= k_window(p.k.norm(), a, b);
        }
        if s == 0.0 {
            return CoherenceMatrix::ZERO;
        }
        let w = if self.twist != 0.0 { rotate_qu(&self.stokes, self.twist * p.x.dot(&self.axis)) } else { self.stokes };
        w.scale(s)
    }

    fn is_positive(&self) -> bool {
        self.stokes.is_positive(0.0) && self.anisotropy.abs() <= 1.0
    }

    fn vanishes_at_start(&self) -> bool {
        self.is_zero() || self.time.vanishes_at_zero()
    }
}

/// Wraps a closure as [`PhaseData`].
pub struct FnData<F>(pub F);

impl<F> Debug for FnData<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("FnData")
    }
}

impl<F> PhaseData for FnData<F>
where
    F: Fn(&PhasePoint, f64) -> CoherenceMatrix + Send + Sync,
{
    fn value(&self, p: &PhasePoint, t: f64) -> CoherenceMatrix {
        (self.0)(p, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_starts_at_zero() {
        let r = TimeProfile::Ramp { rise: 0.5 };
        assert_eq!(r.value(0.0), 0.0);
        assert_eq!(r.value(1.0), 1.0);
        assert!((r.value(0.25) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn anisotropic_field_stays_positive() {
        let f = AnalyticField::uniform(CoherenceMatrix::new(1.0, 0.6, 0.0, 0.8)).with_anisotropy(0.9, Vec3::x());
        assert!(f.is_positive());
        let p = PhasePoint::new(Vec3::zeros(), -Vec3::x());
        assert!(f.value(&p, 0.0).min_eigenvalue() >= -1e-16);
    }
}

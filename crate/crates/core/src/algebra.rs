//! 2×2 Hermitian and complex matrix algebra in Stokes form.
//!
//! A [`CoherenceMatrix`] stores the Stokes vector `(I, Q, U, V)` of the
//! Hermitian matrix `½[[I+Q, U+iV], [U−iV, I−Q]]`. Every spectral quantity
//! comes from the closed form `λ± = I/2 ± ½|(Q,U,V)|`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use bytemuck::{Pod, Zeroable};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("matrix is not Hermitian (residual {residual:.3e})")]
    NotHermitian { residual: f64 },
    #[error("singular matrix: polar factor is not unique")]
    DegeneratePolar { modulus: GeneralMatrix2 },
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Relative tolerance used by the inequality oracles.
pub const INEQ_REL_TOL: f64 = 1e-12;
/// Absolute floor of the inequality tolerance.
pub const INEQ_ABS_TOL: f64 = 1e-14;

/// `lhs ≤ rhs` up to `1e-12·rhs`, floored at `1e-14`.
pub fn within_tolerance(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + inequality_slack(rhs)
}

pub fn inequality_slack(rhs: f64) -> f64 {
    (INEQ_REL_TOL * rhs.abs()).max(INEQ_ABS_TOL)
}

/// Schatten exponent `p ∈ [1, ∞]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SchattenOrder(f64);

impl SchattenOrder {
    pub const ONE: SchattenOrder = SchattenOrder(1.0);
    pub const TWO: SchattenOrder = SchattenOrder(2.0);
    pub const INFINITY: SchattenOrder = SchattenOrder(f64::INFINITY);

    pub fn new(p: f64) -> Result<Self, AlgebraError> {
        if p.is_nan() || p < 1.0 {
            return Err(AlgebraError::Precondition(format!("Schatten order {p} < 1")));
        }
        Ok(SchattenOrder(p))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    /// Conjugate exponent with `1 ↔ ∞`.
    pub fn conjugate(self) -> SchattenOrder {
        if self.0 == 1.0 {
            SchattenOrder(f64::INFINITY)
        } else if self.0.is_infinite() {
            SchattenOrder(1.0)
        } else {
            SchattenOrder(self.0 / (self.0 - 1.0))
        }
    }
}

/// `(a^p + b^p)^{1/p}` for `a ≥ b ≥ 0`, without overflow.
fn lp_pair(a: f64, b: f64, p: SchattenOrder) -> f64 {
    if p.is_infinite() {
        return a.max(b);
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == 0.0 {
        return 0.0;
    }
    let p = p.value();
    if p == 1.0 {
        return hi + lo;
    }
    if p == 2.0 {
        return hi.hypot(lo);
    }
    hi * (1.0 + (lo / hi).powf(p)).powf(1.0 / p)
}

/// Hermitian 2×2 matrix in Stokes coordinates.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default, Pod, Zeroable)]
pub struct CoherenceMatrix {
    pub i: f64,
    pub q: f64,
    pub u: f64,
    pub v: f64,
}

impl CoherenceMatrix {
    pub const ZERO: CoherenceMatrix = CoherenceMatrix { i: 0.0, q: 0.0, u: 0.0, v: 0.0 };
    /// The 2×2 identity matrix (`I = 2`).
    pub const IDENTITY: CoherenceMatrix = CoherenceMatrix { i: 2.0, q: 0.0, u: 0.0, v: 0.0 };

    pub const fn new(i: f64, q: f64, u: f64, v: f64) -> Self {
        CoherenceMatrix { i, q, u, v }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        CoherenceMatrix::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.i, self.q, self.u, self.v]
    }

    /// Real symmetric `[[a, b], [b, d]]`.
    pub fn from_real_symmetric(a: f64, b: f64, d: f64) -> Self {
        CoherenceMatrix::new(a + d, a - d, 2.0 * b, 0.0)
    }

    /// Length of the polarization vector `(Q, U, V)`.
    pub fn polarization(&self) -> f64 {
        let s = self.q * self.q + self.u * self.u + self.v * self.v;
        if s > 1e-280 && s < 1e280 {
            return s.sqrt();
        }
        let m = self.q.abs().max(self.u.abs()).max(self.v.abs());
        if m == 0.0 {
            return 0.0;
        }
        let (q, u, v) = (self.q / m, self.u / m, self.v / m);
        m * (q * q + u * u + v * v).sqrt()
    }

    /// `(λ₁, λ₂)` with `λ₁ ≥ λ₂`.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let r = self.polarization();
        (0.5 * (self.i + r), 0.5 * (self.i - r))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().1
    }

    pub fn trace(&self) -> f64 {
        self.i
    }

    pub fn det(&self) -> f64 {
        let (a, b) = self.eigenvalues();
        a * b
    }

    pub fn is_positive(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }

    /// Singular values `(|λ|₁ ≥ |λ|₂)`.
    pub fn singular_values(&self) -> (f64, f64) {
        let (a, b) = self.eigenvalues();
        let (a, b) = (a.abs(), b.abs());
        if a >= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    pub fn schatten_norm(&self, p: SchattenOrder) -> f64 {
        let (a, b) = self.singular_values();
        lp_pair(a, b, p)
    }

    /// `‖W‖_{S^p}^p = |λ₁|^p + |λ₂|^p` for finite `p`.
    pub fn schatten_pow(&self, p: f64) -> f64 {
        let (a, b) = self.eigenvalues();
        if p == 2.0 {
            a * a + b * b
        } else if p == 1.0 {
            a.abs() + b.abs()
        } else {
            pow_abs(a, p) + pow_abs(b, p)
        }
    }

    /// Functional calculus `f(W)` for Hermitian `W`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Self {
        let r = self.polarization();
        let (lp, lm) = (0.5 * (self.i + r), 0.5 * (self.i - r));
        let (fp, fm) = (f(lp), f(lm));
        if r == 0.0 {
            // f(λ)·Id has I = 2 f(λ)
            return CoherenceMatrix::new(fp + fm, 0.0, 0.0, 0.0);
        }
        let s = (fp - fm) / r;
        CoherenceMatrix::new(fp + fm, s * self.q, s * self.u, s * self.v)
    }

    /// `|W|`.
    pub fn abs(&self) -> Self {
        let (hi, lo) = self.eigenvalues();
        if lo >= 0.0 {
            *self
        } else if hi <= 0.0 {
            self.scale(-1.0)
        } else {
            self.map_spectrum(f64::abs)
        }
    }

    /// `|W|^p`.
    pub fn abs_pow(&self, p: f64) -> Self {
        if p == 1.0 {
            return self.abs();
        }
        self.map_spectrum(|l| l.abs().powf(p))
    }

    /// `W|W|^{p−2}` (the duality map of `S^p`).
    pub fn duality_power(&self, p: f64) -> Self {
        if p == 2.0 {
            return *self;
        }
        self.map_spectrum(|l| {
            if l == 0.0 {
                0.0
            } else {
                l.signum() * pow_abs(l, p - 1.0)
            }
        })
    }

    /// `Tr[A B]` for Hermitian `A`, `B`.
    pub fn trace_product(&self, other: &Self) -> f64 {
        0.5 * (self.i * other.i + self.q * other.q + self.u * other.u + self.v * other.v)
    }

    pub fn scale(&self, s: f64) -> Self {
        CoherenceMatrix::new(s * self.i, s * self.q, s * self.u, s * self.v)
    }

    pub fn max_abs(&self) -> f64 {
        self.i.abs().max(self.q.abs()).max(self.u.abs()).max(self.v.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.i.is_finite() && self.q.is_finite() && self.u.is_finite() && self.v.is_finite()
    }

    pub fn to_matrix(&self) -> GeneralMatrix2 {
        let h = 0.5;
        GeneralMatrix2::new(
            Complex64::new(h * (self.i + self.q), 0.0),
            Complex64::new(h * self.u, h * self.v),
            Complex64::new(h * self.u, -h * self.v),
            Complex64::new(h * (self.i - self.q), 0.0),
        )
    }

    /// Inverse of [`to_matrix`](Self::to_matrix); the anti-Hermitian part must
    /// be below `tol` in Frobenius norm.
    pub fn from_matrix(m: &GeneralMatrix2, tol: f64) -> Result<Self, AlgebraError> {
        let residual = m.hermiticity_residual();
        if residual > tol {
            return Err(AlgebraError::NotHermitian { residual });
        }
        Ok(Self::from_matrix_unchecked(m))
    }

    /// Stokes vector of the Hermitian part of `m`.
    pub fn from_matrix_unchecked(m: &GeneralMatrix2) -> Self {
        let [a, b, c, d] = m.e;
        let off = 0.5 * (b + c.conj());
        CoherenceMatrix::new(a.re + d.re, a.re - d.re, 2.0 * off.re, 2.0 * off.im)
    }
}

impl Add for CoherenceMatrix {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        CoherenceMatrix::new(self.i + o.i, self.q + o.q, self.u + o.u, self.v + o.v)
    }
}

impl AddAssign for CoherenceMatrix {
    fn add_assign(&mut self, o: Self) {
        self.i += o.i;
        self.q += o.q;
        self.u += o.u;
        self.v += o.v;
    }
}

impl Sub for CoherenceMatrix {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        CoherenceMatrix::new(self.i - o.i, self.q - o.q, self.u - o.u, self.v - o.v)
    }
}

impl Neg for CoherenceMatrix {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl Mul<f64> for CoherenceMatrix {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        self.scale(s)
    }
}

/// General complex 2×2 matrix, row-major `[a, b, c, d]` = `[[a, b], [c, d]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralMatrix2 {
    pub e: [Complex64; 4],
}

/// The symplectic matrix `J = [[0, 1], [−1, 0]]`.
pub const SYMPLECTIC_J: GeneralMatrix2 = GeneralMatrix2 {
    e: [
        Complex64::new(0.0, 0.0),
        Complex64::new(1.0, 0.0),
        Complex64::new(-1.0, 0.0),
        Complex64::new(0.0, 0.0),
    ],
};

impl GeneralMatrix2 {
    pub const fn new(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Self {
        GeneralMatrix2 { e: [a, b, c, d] }
    }

    pub fn from_real(a: f64, b: f64, c: f64, d: f64) -> Self {
        GeneralMatrix2::new(a.into(), b.into(), c.into(), d.into())
    }

    pub fn identity() -> Self {
        GeneralMatrix2::from_real(1.0, 0.0, 0.0, 1.0)
    }

    pub fn zero() -> Self {
        GeneralMatrix2::from_real(0.0, 0.0, 0.0, 0.0)
    }

    pub fn diag(a: Complex64, d: Complex64) -> Self {
        GeneralMatrix2::new(a, Complex64::ZERO, Complex64::ZERO, d)
    }

    pub fn adjoint(&self) -> Self {
        let [a, b, c, d] = self.e;
        GeneralMatrix2::new(a.conj(), c.conj(), b.conj(), d.conj())
    }

    pub fn transpose(&self) -> Self {
        let [a, b, c, d] = self.e;
        GeneralMatrix2::new(a, c, b, d)
    }

    pub fn trace(&self) -> Complex64 {
        self.e[0] + self.e[3]
    }

    pub fn det(&self) -> Complex64 {
        self.e[0] * self.e[3] - self.e[1] * self.e[2]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.e.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn scale(&self, s: Complex64) -> Self {
        GeneralMatrix2 { e: self.e.map(|z| z * s) }
    }

    pub fn hermiticity_residual(&self) -> f64 {
        (*self - self.adjoint()).frobenius()
    }

    pub fn is_finite(&self) -> bool {
        self.e.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Singular values `(σ₁ ≥ σ₂)`.
    ///
    /// `σ₁ + σ₂ = (‖M‖_F² + 2|det M|)^{1/2}` and `σ₁² − σ₂²` is the spread of the
    /// Gram matrix, so neither difference is formed by cancellation.
    pub fn singular_values(&self) -> (f64, f64) {
        let [a, b, c, d] = self.e;
        let f2 = self.frobenius_sq();
        let det = self.det().norm();
        let sum = (f2 + 2.0 * det).sqrt();
        if sum == 0.0 {
            return (0.0, 0.0);
        }
        let g_diag = (a.norm_sqr() + c.norm_sqr()) - (b.norm_sqr() + d.norm_sqr());
        let g_off = a.conj() * b + c.conj() * d;
        let spread = g_diag.hypot(2.0 * g_off.norm());
        let s1 = 0.5 * (sum + spread / sum);
        let s2 = (det / s1).min(s1);
        (s1, s2)
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det.norm() == 0.0 {
            return None;
        }
        let [a, b, c, d] = self.e;
        Some(GeneralMatrix2::new(d, -b, -c, a).scale(det.inv()))
    }

    pub fn condition_number(&self) -> f64 {
        let (s1, s2) = self.singular_values();
        if s2 == 0.0 {
            f64::INFINITY
        } else {
            s1 / s2
        }
    }

    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        self.e.iter().zip(o.e.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

impl Add for GeneralMatrix2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut e = self.e;
        for (x, y) in e.iter_mut().zip(o.e) {
            *x += y;
        }
        GeneralMatrix2 { e }
    }
}

impl Sub for GeneralMatrix2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut e = self.e;
        for (x, y) in e.iter_mut().zip(o.e) {
            *x -= y;
        }
        GeneralMatrix2 { e }
    }
}

impl Mul for GeneralMatrix2 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let [a, b, c, d] = self.e;
        let [p, q, r, s] = o.e;
        GeneralMatrix2::new(a * p + b * r, a * q + b * s, c * p + d * r, c * q + d * s)
    }
}

pub fn schatten_norm(m: &GeneralMatrix2, p: SchattenOrder) -> f64 {
    let (s1, s2) = m.singular_values();
    lp_pair(s1, s2, p)
}

/// Stokes form of `M*M`.
fn gram_stokes(m: &GeneralMatrix2) -> CoherenceMatrix {
    CoherenceMatrix::from_matrix_unchecked(&(m.adjoint() * *m))
}

/// Stokes form of `|M| = (M*M)^{1/2}`.
///
/// Uses `|M| = (M*M + |det M|·I)/(σ₁ + σ₂)`, which avoids the square root of
/// the small Gram eigenvalue. Positive semidefinite `M` is returned as is.
pub fn modulus_stokes(m: &GeneralMatrix2) -> CoherenceMatrix {
    if m.hermiticity_residual() == 0.0 {
        let h = CoherenceMatrix::from_matrix_unchecked(m);
        if h.min_eigenvalue() >= 0.0 {
            return h;
        }
    }
    let d = m.det().norm();
    let sum = (m.frobenius_sq() + 2.0 * d).sqrt();
    if sum == 0.0 {
        return CoherenceMatrix::ZERO;
    }
    (gram_stokes(m) + CoherenceMatrix::IDENTITY.scale(d)).scale(1.0 / sum)
}

/// `|M| = (M*M)^{1/2}`.
pub fn modulus(m: &GeneralMatrix2) -> GeneralMatrix2 {
    modulus_stokes(m).to_matrix()
}

/// `M = U·|M|` with `U` unitary.
///
/// Uses `U = (M + e^{iθ} adj(M)*) / (σ₁ + σ₂)` where `det M = |det M| e^{iθ}`,
/// which stays accurate for badly conditioned `M`.
pub fn polar_decompose(m: &GeneralMatrix2) -> Result<(GeneralMatrix2, GeneralMatrix2), AlgebraError> {
    let abs = modulus(m);
    let det = m.det();
    let (s1, s2) = m.singular_values();
    if s1 == 0.0 || s2 <= 1e-15 * s1 {
        return Err(AlgebraError::DegeneratePolar { modulus: abs });
    }
    let phase = det / det.norm();
    let [a, b, c, d] = m.e;
    let adj_star = GeneralMatrix2::new(d.conj(), -c.conj(), -b.conj(), a.conj());
    let sum = *m + adj_star.scale(phase);
    let norm = (m.frobenius_sq() + 2.0 * det.norm()).sqrt();
    let u = sum.scale(Complex64::new(1.0 / norm, 0.0));
    // modulus consistent with the returned unitary
    let p = CoherenceMatrix::from_matrix_unchecked(&(u.adjoint() * *m)).to_matrix();
    Ok((u, p))
}

/// `(‖SUS‖_p, ‖S|U|S‖_p)`.
pub fn sandwich_inequality_check(
    s: &GeneralMatrix2,
    u: &GeneralMatrix2,
    p: SchattenOrder,
) -> Result<(f64, f64), AlgebraError> {
    let (s1, s2) = s.singular_values();
    if s1 == 0.0 || s2 <= 1e-15 * s1 {
        return Err(AlgebraError::Precondition("S must be invertible".into()));
    }
    let lhs = schatten_norm(&(*s * *u * *s), p);
    let rhs = schatten_norm(&(*s * modulus(u) * *s), p);
    Ok((lhs, rhs))
}

/// `Tr[A H]` for general `A` and Hermitian `H`.
fn trace_with(a: &GeneralMatrix2, h: &CoherenceMatrix) -> Complex64 {
    (*a * h.to_matrix()).trace()
}

/// Generalized trace-Hölder: `|Tr[TUT*V]| ≤ Tr[T*T|U|^p]^{1/p} Tr[TT*|V|^q]^{1/q}`.
pub fn trace_holder_check(
    t: &GeneralMatrix2,
    u: &CoherenceMatrix,
    v: &CoherenceMatrix,
    p: SchattenOrder,
) -> Result<(f64, f64), AlgebraError> {
    if !(p.value() > 1.0 && p.value().is_finite()) {
        return Err(AlgebraError::Precondition(format!("need 1 < p < ∞, got {}", p.value())));
    }
    let q = p.conjugate().value();
    let p = p.value();
    let lhs = (*t * u.to_matrix() * t.adjoint() * v.to_matrix()).trace().norm();
    let a = trace_with(&(t.adjoint() * *t), &u.abs_pow(p)).re.max(0.0);
    let b = trace_with(&(*t * t.adjoint()), &v.abs_pow(q)).re.max(0.0);
    Ok((lhs, a.powf(1.0 / p) * b.powf(1.0 / q)))
}

/// Endpoint cases `p = 1, ∞`: `(|Tr[TUT*V]|, Tr[T*T|U|]σ₁(V), σ₁(U)Tr[TT*|V|])`.
pub fn trace_endpoint_check(t: &GeneralMatrix2, u: &CoherenceMatrix, v: &CoherenceMatrix) -> (f64, f64, f64) {
    let lhs = (*t * u.to_matrix() * t.adjoint() * v.to_matrix()).trace().norm();
    let r1 = trace_with(&(t.adjoint() * *t), &u.abs()).re.max(0.0) * v.singular_values().0;
    let r2 = u.singular_values().0 * trace_with(&(*t * t.adjoint()), &v.abs()).re.max(0.0);
    (lhs, r1, r2)
}

/// `(Tr[(S^{1/p}|U|S^{1/p})^p], Tr[S|U|^p S])` for diagonal `S ⪰ 0`.
pub fn lieb_thirring_check(
    s: &GeneralMatrix2,
    u: &CoherenceMatrix,
    p: f64,
) -> Result<(f64, f64), AlgebraError> {
    if p.is_nan() || p < 1.0 {
        return Err(AlgebraError::Precondition(format!("Lieb–Thirring needs p ≥ 1, got {p}")));
    }
    let [a, b, c, d] = s.e;
    let scale = a.norm().max(d.norm()).max(1e-300);
    if b.norm() > 1e-14 * scale || c.norm() > 1e-14 * scale {
        return Err(AlgebraError::Precondition("S must be diagonal".into()));
    }
    if a.im.abs() > 1e-14 * scale || d.im.abs() > 1e-14 * scale || a.re < 0.0 || d.re < 0.0 {
        return Err(AlgebraError::Precondition("S must have nonnegative real diagonal".into()));
    }
    let (sa, sd) = (a.re, d.re);
    let absu = u.abs();
    let (ra, rd) = (sa.powf(1.0 / p), sd.powf(1.0 / p));
    // S^{1/p}|U|S^{1/p}, Hermitian positive semidefinite
    let m = absu.to_matrix();
    let inner = GeneralMatrix2::new(m.e[0] * (ra * ra), m.e[1] * (ra * rd), m.e[2] * (ra * rd), m.e[3] * (rd * rd));
    let inner = CoherenceMatrix::from_matrix_unchecked(&inner);
    let (l1, l2) = inner.eigenvalues();
    let lhs = l1.max(0.0).powf(p) + l2.max(0.0).powf(p);
    let up = u.abs_pow(p).to_matrix();
    let rhs = (sa * sa * up.e[0].re + sd * sd * up.e[3].re).max(0.0);
    Ok((lhs, rhs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    Hermitian,
    Positive,
    Invertible,
    Unitary,
}

/// Largest condition number accepted for invertible samples.
pub const MAX_SAMPLE_CONDITION: f64 = 1e6;

fn gaussian_matrix<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> GeneralMatrix2 {
    let mut z = || {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(scale * re, scale * im)
    };
    GeneralMatrix2::new(z(), z(), z(), z())
}

fn invertible_matrix<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> GeneralMatrix2 {
    loop {
        let a = gaussian_matrix(scale, rng);
        if a.condition_number() <= MAX_SAMPLE_CONDITION {
            return a;
        }
    }
}

/// Random matrix of the requested kind drawn from `rng`.
pub fn sample_random_with<R: Rng + ?Sized>(kind: SampleKind, scale: f64, rng: &mut R) -> GeneralMatrix2 {
    assert!(scale > 0.0, "sample scale must be positive");
    match kind {
        SampleKind::Hermitian => {
            let a = gaussian_matrix(scale, rng);
            a + a.adjoint()
        }
        SampleKind::Positive => {
            let a = gaussian_matrix(scale, rng);
            a.adjoint() * a
        }
        SampleKind::Invertible => invertible_matrix(scale, rng),
        SampleKind::Unitary => loop {
            let a = invertible_matrix(1.0, rng);
            if let Ok((u, _)) = polar_decompose(&a) {
                break u;
            }
        },
    }
}

/// Deterministic sample for a given seed.
pub fn sample_random(kind: SampleKind, scale: f64, seed: u64) -> GeneralMatrix2 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_random_with(kind, scale, &mut rng)
}

/// `|x|^p` with `powi`/`sqrt` shortcuts for integer and half-integer `p`.
pub fn pow_abs(x: f64, p: f64) -> f64 {
    let a = x.abs();
    let twice = 2.0 * p;
    if twice == twice.trunc() && (0.0..=64.0).contains(&twice) {
        let n = p.trunc() as i32;
        if p == p.trunc() {
            a.powi(n)
        } else {
            a.powi(n) * a.sqrt()
        }
    } else {
        a.powf(p)
    }
}

/// Random Hermitian matrix with Gaussian Stokes entries.
pub fn sample_coherence<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> CoherenceMatrix {
    let mut g = || -> f64 { scale * rng.sample::<f64, _>(StandardNormal) };
    CoherenceMatrix::new(g(), g(), g(), g())
}

/// Random positive semidefinite matrix in Stokes form.
pub fn sample_positive_coherence<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> CoherenceMatrix {
    let q: f64 = rng.sample(StandardNormal);
    let u: f64 = rng.sample(StandardNormal);
    let v: f64 = rng.sample(StandardNormal);
    let r = (q * q + u * u + v * v).sqrt();
    let excess: f64 = rng.random::<f64>();
    CoherenceMatrix::new(scale * (r + excess), scale * q, scale * u, scale * v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stokes_examples() {
        let m = CoherenceMatrix::new(1.0, 0.0, 0.0, 0.0).to_matrix();
        assert_eq!(m, GeneralMatrix2::from_real(0.5, 0.0, 0.0, 0.5));
        let m = CoherenceMatrix::new(1.0, 1.0, 0.0, 0.0).to_matrix();
        assert_eq!(m, GeneralMatrix2::from_real(1.0, 0.0, 0.0, 0.0));
        let m = CoherenceMatrix::new(0.0, 0.0, 0.0, 1.0).to_matrix();
        assert_eq!(m.e[1], Complex64::new(0.0, 0.5));
        assert_eq!(m.e[2], Complex64::new(0.0, -0.5));
    }

    #[test]
    fn from_matrix_rejects_non_hermitian() {
        let m = GeneralMatrix2::from_real(1.0, 2.0, 0.0, 1.0);
        match CoherenceMatrix::from_matrix(&m, 1e-12) {
            Err(AlgebraError::NotHermitian { residual }) => assert!((residual - 8f64.sqrt()).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn conjugate_exponents() {
        assert!(SchattenOrder::ONE.conjugate().is_infinite());
        assert_eq!(SchattenOrder::INFINITY.conjugate().value(), 1.0);
        assert_eq!(SchattenOrder::new(3.0).unwrap().conjugate().value(), 1.5);
        assert!(SchattenOrder::new(0.5).is_err());
    }

    #[test]
    fn symplectic_is_unitary() {
        let j = SYMPLECTIC_J;
        assert_eq!(j.adjoint() * j, GeneralMatrix2::identity());
    }

    #[test]
    fn duality_power_at_two_is_identity_map() {
        let w = CoherenceMatrix::new(0.3, -1.0, 0.2, 0.5);
        assert_eq!(w.duality_power(2.0), w);
        let d = w.duality_power(4.0);
        // Tr[W·W|W|^2] = ‖W‖_4^4
        assert!((w.trace_product(&d) - w.schatten_pow(4.0)).abs() < 1e-12);
    }

    #[test]
    fn map_spectrum_on_scalar_matrix() {
        let w = CoherenceMatrix::new(3.0, 0.0, 0.0, 0.0);
        let r = w.map_spectrum(|l| l * l);
        assert_eq!(r, CoherenceMatrix::new(4.5, 0.0, 0.0, 0.0));
    }
}

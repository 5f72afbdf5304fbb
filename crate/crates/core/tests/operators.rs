use num_complex::Complex64;
use proptest::prelude::*;

use polrte::algebra::CoherenceMatrix;
use polrte::flow::{PhasePoint, Vec3};
use polrte::geometry::{MomentumGrid, PhaseGrid, SpatialDomain};
use polrte::operators::{
    absorption_exponential, apply_coupling, coupling_bound_check, coupling_exponential, dissipativity_pairing,
    duality_pairing_check, scattering_bound_check, CouplingField, OperatorError, PhaseFunction, ScalarProfile,
    ScatteringKernel, ScatteringOperator, TransferPreset, NORM_TOL,
};
use polrte::verify::{default_kernel, field_bounds, random_field, rotation_eigen_defect};

fn small_grid() -> PhaseGrid {
    let m = MomentumGrid::gauss_shells(0.5, 1.5, 2, 4, 8).unwrap();
    PhaseGrid::new(SpatialDomain::unit_box(), 3, m).unwrap()
}

fn coupling() -> CouplingField {
    let s = ScalarProfile::Gaussian { base: 0.5, amplitude: 1.0, center: Vec3::new(0.3, 0.6, 0.5), width: 0.4 };
    CouplingField::new(s, 0.3, Vec3::new(0.0, 0.0, 1.0)).unwrap()
}

/// `T W Tᵀ` by explicit complex 2×2 products, read back as Stokes parameters.
fn congruence_oracle(t: &[[f64; 2]; 2], w: &CoherenceMatrix) -> CoherenceMatrix {
    let h = [
        [Complex64::new(0.5 * (w.i + w.q), 0.0), Complex64::new(0.5 * w.u, 0.5 * w.v)],
        [Complex64::new(0.5 * w.u, -0.5 * w.v), Complex64::new(0.5 * (w.i - w.q), 0.0)],
    ];
    let mut r = [[Complex64::new(0.0, 0.0); 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                for d in 0..2 {
                    r[a][b] += t[a][c] * h[c][d] * t[b][d];
                }
            }
        }
    }
    CoherenceMatrix::new(r[0][0].re + r[1][1].re, r[0][0].re - r[1][1].re, 2.0 * r[0][1].re, 2.0 * r[0][1].im)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn shell_application_matches_explicit_sum() {
    let g = small_grid();
    let op = ScatteringOperator::assemble(&default_kernel(), &g).unwrap();
    let n = op.n_directions();
    let vals = random_field(n, 11);
    let (space, shell) = (5, 1);
    let x = g.lattice.positions()[space];
    let r = g.momentum.radii()[shell];
    let scale = default_kernel().strength.value(&x) * r * r;
    let got = op.apply_shell(space, shell, &vals).unwrap();
    for i in 0..n {
        let mut want = CoherenceMatrix::ZERO;
        for (j, w) in vals.iter().enumerate() {
            let (c, t) = op.pair(i, j);
            want = want + congruence_oracle(&t, w).scale(c * scale);
        }
        assert!((got[i] - want).max_abs() < 1e-12 * (1.0 + want.max_abs()), "direction {i}");
    }
    assert!(matches!(op.apply_shell(0, 0, &vals[1..]), Err(OperatorError::ShellMismatch { .. })));
}

#[test]
fn whole_field_application_matches_shell_application() {
    let g = small_grid();
    let op = ScatteringOperator::assemble(&default_kernel(), &g).unwrap();
    let u = random_field(g.n_nodes(), 3);
    let su = op.apply(&g, &u);
    let nd = g.n_directions();
    for space in [0, 13, g.n_space() - 1] {
        for shell in 0..g.n_shells() {
            let base = g.node_index(space, shell, 0);
            let want = op.apply_shell(space, shell, &u[base..base + nd]).unwrap();
            for d in 0..nd {
                assert!((su[base + d] - want[d]).max_abs() < 1e-12);
            }
        }
    }
}

#[test]
fn rebalanced_kernel_is_normalized() {
    // Σ_j c_ij T_ij T_ijᵀ = Σ_unit·I for every out-direction i
    let g = small_grid();
    for kernel in [
        default_kernel(),
        ScatteringKernel::new(ScalarProfile::Constant { value: 1.0 }, PhaseFunction::Isotropic, TransferPreset::Identity).unwrap(),
        ScatteringKernel::new(
            ScalarProfile::Constant { value: 1.0 },
            PhaseFunction::HenyeyGreenstein { g: 0.4 },
            TransferPreset::RayleighLike,
        )
        .unwrap(),
    ] {
        let op = ScatteringOperator::assemble(&kernel, &g).unwrap();
        op.check_admissible().unwrap();
        let s = op.report.sigma_unit;
        let n = op.n_directions();
        for i in 0..n {
            let mut m = [[0.0; 2]; 2];
            for j in 0..n {
                let (c, t) = op.pair(i, j);
                for a in 0..2 {
                    for b in 0..2 {
                        m[a][b] += c * (t[a][0] * t[b][0] + t[a][1] * t[b][1]);
                    }
                }
            }
            let err = ((m[0][0] - s).powi(2) + (m[1][1] - s).powi(2) + 2.0 * m[0][1].powi(2)).sqrt() / s;
            assert!(err <= NORM_TOL, "direction {i}: {err}");
        }
    }
}

#[test]
fn isotropic_identity_kernel_has_the_sphere_area_as_rate() {
    let g = small_grid();
    let k = ScatteringKernel::new(ScalarProfile::Constant { value: 1.0 }, PhaseFunction::Isotropic, TransferPreset::Identity).unwrap();
    let op = ScatteringOperator::assemble(&k, &g).unwrap();
    assert!(close(op.report.sigma_unit, 4.0 * std::f64::consts::PI, 1e-12));
    assert!(op.report.raw_residual < 1e-12);
    assert!(close(op.absorption(0, 1), g.momentum.radii()[1].powi(2) * 4.0 * std::f64::consts::PI, 1e-12));
}

#[test]
fn asymmetric_kernel_is_rejected() {
    let g = small_grid();
    let op = ScatteringOperator::assemble(&default_kernel().with_symmetry_defect(0.1), &g).unwrap();
    assert!(matches!(op.check_admissible(), Err(OperatorError::AsymmetricKernel { .. })));
}

#[test]
fn invalid_kernel_parameters() {
    let c = ScalarProfile::Constant { value: 1.0 };
    assert!(ScatteringKernel::new(c.clone(), PhaseFunction::HenyeyGreenstein { g: 1.0 }, TransferPreset::Identity).is_err());
    assert!(ScatteringKernel::new(ScalarProfile::Constant { value: -1.0 }, PhaseFunction::Isotropic, TransferPreset::Identity).is_err());
    let bad = ScalarProfile::Gaussian { base: 1.0, amplitude: 1.0, center: Vec3::zeros(), width: 0.0 };
    assert!(ScatteringKernel::new(bad, PhaseFunction::Isotropic, TransferPreset::Identity).is_err());
    assert!(absorption_exponential(-1.0, &CoherenceMatrix::IDENTITY, 1.0).is_err());
}

#[test]
fn fused_bounds_agree_with_separate_evaluations() {
    let g = small_grid();
    let nf = coupling();
    let op = ScatteringOperator::assemble(&default_kernel(), &g).unwrap();
    let u = random_field(g.n_nodes(), 21);
    let v = random_field(g.n_nodes(), 22);
    for p in [1.5, 2.0, 3.0, 4.0] {
        let b = field_bounds(&op, &nf, &g, &u, &v, p);
        let c = coupling_bound_check(&nf, &g, &u, p);
        let s = scattering_bound_check(&op, &g, &u, p);
        let d = duality_pairing_check(&op, &g, &u, &v, p).unwrap();
        let diss = dissipativity_pairing(&op, &g, &u, p);
        for (x, y) in [(b.coupling, c), (b.scattering, s), (b.duality, d)] {
            assert!(close(x.0, y.0, 1e-12) && close(x.1, y.1, 1e-12), "p {p}: {x:?} vs {y:?}");
        }
        assert!((b.dissipativity.0 - diss).abs() <= 1e-12 * b.dissipativity.1, "p {p}");
        assert!(b.coupling.0 <= b.coupling.1 && b.scattering.0 <= b.scattering.1 && b.duality.0 <= b.duality.1);
        assert!(b.dissipativity.0 <= 1e-10 * b.dissipativity.1);
    }
    assert!(duality_pairing_check(&op, &g, &u, &v, 1.0).is_err());
}

#[test]
fn rotation_preserves_eigenvalues() {
    assert!(rotation_eigen_defect(&coupling(), 2000, 5) <= 1e-14);
}

#[test]
fn coupling_generates_the_rotation() {
    let nf = coupling();
    let p = PhasePoint::new(Vec3::new(0.2, 0.4, 0.7), Vec3::new(0.3, -0.4, 1.0));
    let w = CoherenceMatrix::new(1.0, 0.3, -0.5, 0.2);
    let h = 1e-6;
    let fd = (coupling_exponential(&nf, &w, h, &p) - coupling_exponential(&nf, &w, -h, &p)).scale(0.5 / h);
    assert!((fd - apply_coupling(&nf, &w, &p)).max_abs() < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn absorption_is_a_semigroup(s in 0.0f64..5.0, a in 0.0f64..2.0, b in 0.0f64..2.0, q in -1.0f64..1.0) {
        let w = CoherenceMatrix::new(1.5, q, 0.2, -0.3);
        let two = absorption_exponential(s, &absorption_exponential(s, &w, a).unwrap(), b).unwrap();
        let one = absorption_exponential(s, &w, a + b).unwrap();
        prop_assert!((two - one).max_abs() < 1e-14);
    }

    #[test]
    fn coupling_rotation_is_a_group(t in -3.0f64..3.0, s in -3.0f64..3.0, q in -1.0f64..1.0, u in -1.0f64..1.0) {
        let nf = coupling();
        let p = PhasePoint::new(Vec3::new(0.5, 0.5, 0.5), Vec3::new(0.0, 1.0, 1.0));
        let w = CoherenceMatrix::new(1.0, q, u, 0.4);
        let two = coupling_exponential(&nf, &coupling_exponential(&nf, &w, s, &p), t, &p);
        let one = coupling_exponential(&nf, &w, s + t, &p);
        prop_assert!((two - one).max_abs() < 1e-13);
        prop_assert!((one.i - w.i).abs() == 0.0 && (one.v - w.v).abs() == 0.0);
    }
}

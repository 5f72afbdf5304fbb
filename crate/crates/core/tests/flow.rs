use approx::assert_relative_eq;
use proptest::prelude::*;

use polrte::flow::{
    flow_jacobian_det, flow_map, hamiltonian, heaviside, momentum_bounds_check, rhs, trajectory, FlowConfig, FlowError,
    Integrator, PhasePoint, Vec3, VelocityField,
};

fn lens() -> VelocityField {
    VelocityField::gaussian_lens(1.0, 0.3, Vec3::new(0.5, 0.5, 0.5), 0.3).unwrap()
}

fn vec3(r: std::ops::Range<f64>) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(r).prop_map(|a| Vec3::new(a[0], a[1], a[2]))
}

fn momentum() -> impl Strategy<Value = Vec3> {
    vec3(-2.0..2.0).prop_filter("nonzero momentum", |k| k.norm() > 0.1)
}

#[test]
fn constant_speed_gives_straight_rays() {
    let vf = VelocityField::constant(2.0).unwrap();
    let p = PhasePoint::new(Vec3::new(0.1, 0.2, 0.3), Vec3::new(3.0, 0.0, 4.0));
    let q = flow_map(&vf, &p, 1.5, &FlowConfig::default()).unwrap();
    // x + ν t k/|k|
    let want = Vec3::new(0.1 + 2.0 * 1.5 * 0.6, 0.2, 0.3 + 2.0 * 1.5 * 0.8);
    assert!((q.x - want).norm() < 1e-13);
    assert_eq!(q.k, p.k);
}

#[test]
fn rays_bend_towards_slow_regions() {
    // ν smaller at the lens centre; a ray passing beside the centre turns towards it
    let vf = lens();
    let p = PhasePoint::new(Vec3::new(0.5, 0.65, 0.0), Vec3::new(0.0, 0.0, 1.0));
    let q = flow_map(&vf, &p, 0.5, &FlowConfig::default()).unwrap();
    assert!(q.k.y < 0.0, "k = {:?}", q.k);
}

#[test]
fn trajectory_keeps_both_end_points() {
    let vf = lens();
    let p = PhasePoint::new(Vec3::new(0.2, 0.5, 0.5), Vec3::new(1.0, 0.0, 0.0));
    let cfg = FlowConfig { dt_base: 1e-2, ..FlowConfig::default() };
    let t = trajectory(&vf, &p, 0.37, &cfg, 7).unwrap();
    assert_eq!(t.first().unwrap().0, 0.0);
    assert_relative_eq!(t.last().unwrap().0, 0.37, epsilon = 1e-14);
    assert_eq!(t.last().unwrap().1, flow_map(&vf, &p, 0.37, &cfg).unwrap());
}

#[test]
fn momentum_bound_violation_is_reported() {
    let vf = lens();
    let p = PhasePoint::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0));
    let bad = PhasePoint::new(Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0));
    let r = momentum_bounds_check(&vf, &[(0.0, p), (1.0, bad)]);
    assert!(matches!(r, Err(FlowError::MomentumBound { .. })));
}

#[test]
fn invalid_profiles_and_configs() {
    assert!(VelocityField::constant(0.0).is_err());
    assert!(VelocityField::constant(-1.0).is_err());
    assert!(VelocityField::gaussian_lens(1.0, 0.3, Vec3::zeros(), 0.0).is_err());
    assert!(FlowConfig { dt_base: 0.0, ..FlowConfig::default() }.validate().is_err());
    assert!(FlowConfig { event_tol: -1.0, ..FlowConfig::default() }.validate().is_err());
}

#[test]
fn heun_converges_to_rk4() {
    let vf = lens();
    let p = PhasePoint::new(Vec3::new(0.2, 0.55, 0.45), Vec3::new(1.0, 0.2, 0.0));
    let rk = flow_map(&vf, &p, 1.0, &FlowConfig { dt_base: 1e-3, ..FlowConfig::default() }).unwrap();
    let err = |h: f64| {
        let cfg = FlowConfig { dt_base: h, integrator: Integrator::Heun, ..FlowConfig::default() };
        flow_map(&vf, &p, 1.0, &cfg).unwrap().distance(&rk)
    };
    let (e1, e2) = (err(1e-2), err(5e-3));
    // second order
    assert!((e1 / e2).log2() > 1.7, "{e1} {e2}");
}

#[test]
fn heaviside_convention() {
    assert_eq!(heaviside(1e-13, 1e-12), 0.5);
    assert_eq!(heaviside(2e-12, 1e-12), 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hamiltonian_is_conserved(x in vec3(0.0..1.0), k in momentum(), t in 0.0f64..3.0) {
        let vf = lens();
        let p = PhasePoint::new(x, k);
        let q = flow_map(&vf, &p, t, &FlowConfig::default()).unwrap();
        let (h0, h1) = (hamiltonian(&vf, &p).unwrap(), hamiltonian(&vf, &q).unwrap());
        prop_assert!((h1 - h0).abs() <= 1e-10 * h0);
    }

    #[test]
    fn angular_momentum_about_a_radial_lens_is_conserved(x in vec3(0.0..1.0), k in momentum(), t in 0.0f64..3.0) {
        // ∇ν is radial about the centre and ẋ ∥ k, so (x − c) × k is constant
        let c = Vec3::new(0.5, 0.5, 0.5);
        let vf = lens();
        let p = PhasePoint::new(x, k);
        let q = flow_map(&vf, &p, t, &FlowConfig::default()).unwrap();
        let (l0, l1) = ((p.x - c).cross(&p.k), (q.x - c).cross(&q.k));
        prop_assert!((l1 - l0).norm() <= 1e-9 * (1.0 + l0.norm()));
    }

    #[test]
    fn momentum_stays_within_speed_ratio(x in vec3(0.0..1.0), k in momentum()) {
        let vf = lens();
        let t = trajectory(&vf, &PhasePoint::new(x, k), 2.0, &FlowConfig::default(), 10).unwrap();
        prop_assert!(momentum_bounds_check(&vf, &t).is_ok());
    }

    #[test]
    fn reversal_negates_momentum(x in vec3(0.0..1.0), k in momentum(), t in 0.0f64..2.0) {
        // φ_{−t}(x, k) = R φ_t(x, −k) with R(x, k) = (x, −k)
        let vf = lens();
        let cfg = FlowConfig::default();
        let back = flow_map(&vf, &PhasePoint::new(x, k), -t, &cfg).unwrap();
        let fwd = flow_map(&vf, &PhasePoint::new(x, -k), t, &cfg).unwrap();
        prop_assert!((back.x - fwd.x).norm() < 1e-12);
        prop_assert!((back.k + fwd.k).norm() < 1e-12);
    }

    #[test]
    fn flow_is_a_group(x in vec3(0.0..1.0), k in momentum(), s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let vf = lens();
        let cfg = FlowConfig { dt_base: 1e-4, ..FlowConfig::default() };
        let p = PhasePoint::new(x, k);
        let two = flow_map(&vf, &flow_map(&vf, &p, s, &cfg).unwrap(), t, &cfg).unwrap();
        let one = flow_map(&vf, &p, s + t, &cfg).unwrap();
        prop_assert!(two.distance(&one) < 1e-9);
        let back = flow_map(&vf, &flow_map(&vf, &p, s, &cfg).unwrap(), -s, &cfg).unwrap();
        prop_assert!(back.distance(&p) < 1e-9);
    }

    #[test]
    fn rhs_is_the_hamiltonian_gradient(x in vec3(0.0..1.0), k in momentum()) {
        // compare with central differences of H
        let vf = lens();
        let p = PhasePoint::new(x, k);
        let (dx, dk) = rhs(&vf, &p).unwrap();
        let h = 1e-6;
        for a in 0..3 {
            let (mut kp, mut km, mut xp, mut xm) = (p, p, p, p);
            kp.k[a] += h;
            km.k[a] -= h;
            xp.x[a] += h;
            xm.x[a] -= h;
            let hk = (hamiltonian(&vf, &kp).unwrap() - hamiltonian(&vf, &km).unwrap()) / (2.0 * h);
            let hx = (hamiltonian(&vf, &xp).unwrap() - hamiltonian(&vf, &xm).unwrap()) / (2.0 * h);
            prop_assert!((dx[a] - hk).abs() < 1e-7);
            prop_assert!((dk[a] + hx).abs() < 1e-7 * (1.0 + k.norm()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn flow_preserves_phase_volume(x in vec3(0.0..1.0), k in momentum()) {
        let vf = VelocityField::ramp(Vec3::zeros(), Vec3::new(0.4, 0.2, 0.0), 0.8, 1.6).unwrap();
        let det = flow_jacobian_det(&vf, &PhasePoint::new(x, k), 1.0, &FlowConfig::default()).unwrap();
        prop_assert!((det - 1.0).abs() < 1e-5, "det = {det}");
    }
}

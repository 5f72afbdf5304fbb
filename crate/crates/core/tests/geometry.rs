use std::f64::consts::PI;

use approx::assert_relative_eq;
use proptest::prelude::*;

use polrte::flow::{FlowConfig, PhasePoint, Vec3, VelocityField};
use polrte::geometry::{
    boundary_quadrature, classify_with, surface_nodes, travel_time, BoundaryClass, InterpolationOrder, MomentumGrid,
    PhaseGrid, Sense, SpatialDomain, TravelTime,
};
use polrte::quadrature::{gauss_legendre, gauss_legendre_on};

fn unit_ball() -> SpatialDomain {
    SpatialDomain::ball(Vec3::zeros(), 1.0).unwrap()
}

fn unit_dir() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-1.0f64..1.0)
        .prop_filter("nonzero", |a| Vec3::new(a[0], a[1], a[2]).norm() > 0.1)
        .prop_map(|a| Vec3::new(a[0], a[1], a[2]).normalize())
}

fn point_in_ball() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-0.55f64..0.55).prop_map(|a| Vec3::new(a[0], a[1], a[2]))
}

/// Distance along `d` from `x` to the unit sphere.
fn sphere_exit(x: &Vec3, d: &Vec3) -> f64 {
    let b = x.dot(d);
    let c = x.norm_squared() - 1.0;
    -b + (b * b - c).sqrt()
}

fn tau(domain: &SpatialDomain, vf: &VelocityField, p: &PhasePoint, sense: Sense) -> f64 {
    match travel_time(domain, vf, p, sense, &FlowConfig::default(), None).unwrap() {
        TravelTime::Finite { time, .. } => time,
        TravelTime::Horizon { .. } => f64::INFINITY,
    }
}

#[test]
fn gauss_legendre_is_exact_to_degree_2n_minus_1() {
    for n in 1..12 {
        let (x, w) = gauss_legendre(n);
        for deg in 0..2 * n {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-13, "n {n} deg {deg}: {q} vs {exact}");
        }
    }
    let (x, w) = gauss_legendre_on(4, 0.5, 2.0);
    let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
    assert_relative_eq!(q, (8.0 - 0.125) / 3.0, epsilon = 1e-14);
}

#[test]
fn direction_weights_cover_the_sphere() {
    let m = MomentumGrid::gauss_shells(0.5, 2.0, 3, 6, 12).unwrap();
    let s: f64 = m.direction_weights().iter().sum();
    assert_relative_eq!(s, 4.0 * PI, epsilon = 1e-12);
    for d in m.directions() {
        assert_relative_eq!(d.norm(), 1.0, epsilon = 1e-15);
    }
    // Σ_r measure = ∫ k² dk over [0.5, 2]
    let shells: f64 = (0..m.n_shells()).map(|r| m.shell_measure(r)).sum();
    assert_relative_eq!(shells, (8.0 - 0.125) / 3.0, epsilon = 1e-12);
}

#[test]
fn box_lattice_weights_sum_to_the_volume() {
    let d = SpatialDomain::cuboid(Vec3::zeros(), Vec3::new(2.0, 1.0, 0.5)).unwrap();
    let g = PhaseGrid::new(d, 6, MomentumGrid::single_shell(1.0, 2, 4).unwrap()).unwrap();
    let v: f64 = g.lattice.weights().iter().sum();
    assert_relative_eq!(v, 1.0, epsilon = 1e-13);
    assert_eq!(g.n_space(), 7 * 7 * 7);
}

#[test]
fn ball_lattice_weights_approach_the_volume() {
    let g = PhaseGrid::new(unit_ball(), 24, MomentumGrid::single_shell(1.0, 2, 4).unwrap()).unwrap();
    let v: f64 = g.lattice.weights().iter().sum();
    assert_relative_eq!(v, 4.0 * PI / 3.0, max_relative = 2e-2);
}

#[test]
fn surface_nodes_cover_the_boundary() {
    let area = |d: &SpatialDomain, n| surface_nodes(d, n).iter().map(|s| s.area).sum::<f64>();
    assert_relative_eq!(area(&SpatialDomain::unit_box(), 8), 6.0, epsilon = 1e-12);
    assert_relative_eq!(area(&unit_ball(), 32), 4.0 * PI, max_relative = 1e-3);
    for s in surface_nodes(&unit_ball(), 8) {
        assert_relative_eq!(s.normal.dot(&s.x), 1.0, epsilon = 1e-12);
    }
}

#[test]
fn inflow_and_outflow_flux_balance() {
    // ∫ k̂·n over the sphere of directions vanishes at every surface node
    let m = MomentumGrid::single_shell(1.0, 6, 12).unwrap();
    let vf = VelocityField::constant(1.0).unwrap();
    let bq = boundary_quadrature(&unit_ball(), &vf, &m, 12).unwrap();
    let i = bq.total_weight(BoundaryClass::Inflow);
    let o = bq.total_weight(BoundaryClass::Outflow);
    assert_relative_eq!(i, o, max_relative = 1e-10);
    // each side carries π per unit area
    assert_relative_eq!(i, PI * 4.0 * PI, max_relative = 2e-2);
}

#[test]
fn classification_at_a_box_face() {
    let vf = VelocityField::constant(1.0).unwrap();
    let n = Vec3::new(1.0, 0.0, 0.0);
    let x = Vec3::new(1.0, 0.5, 0.5);
    assert_eq!(classify_with(&vf, &x, &Vec3::new(1.0, 0.2, 0.0), &n, 1e-12).0, BoundaryClass::Outflow);
    assert_eq!(classify_with(&vf, &x, &Vec3::new(-1.0, 0.2, 0.0), &n, 1e-12).0, BoundaryClass::Inflow);
    assert_eq!(classify_with(&vf, &x, &Vec3::new(0.0, 1.0, 0.0), &n, 1e-12).0, BoundaryClass::Tangential);
}

#[test]
fn travel_time_is_zero_when_leaving_from_the_boundary() {
    let vf = VelocityField::gaussian_lens(1.0, 0.3, Vec3::zeros(), 0.5).unwrap();
    let p = PhasePoint::new(Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.0, 0.0, 1.0));
    assert_eq!(tau(&unit_ball(), &vf, &p, Sense::Backward), 0.0);
    assert!(tau(&unit_ball(), &vf, &p, Sense::Forward) > 1.0);
}

#[test]
fn travel_time_outside_is_an_error() {
    let vf = VelocityField::constant(1.0).unwrap();
    let p = PhasePoint::new(Vec3::new(2.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0));
    assert!(travel_time(&unit_ball(), &vf, &p, Sense::Forward, &FlowConfig::default(), None).is_err());
}

#[test]
fn box_travel_time_by_hand() {
    let vf = VelocityField::constant(2.0).unwrap();
    let p = PhasePoint::new(Vec3::new(0.25, 0.5, 0.5), Vec3::new(3.0, 4.0, 0.0));
    // forward: y reaches 1 after s = 0.5/0.8, before x reaches 1 at 0.75/0.6
    assert_relative_eq!(tau(&SpatialDomain::unit_box(), &vf, &p, Sense::Forward), 0.625 / 2.0, epsilon = 1e-12);
    // backward: x reaches 0 after s = 0.25/0.6, before y reaches 0 at 0.5/0.8
    assert_relative_eq!(tau(&SpatialDomain::unit_box(), &vf, &p, Sense::Backward), 0.25 / 0.6 / 2.0, epsilon = 1e-12);
}

#[test]
fn linear_interpolation_reproduces_affine_fields() {
    let m = MomentumGrid::gauss_shells(0.5, 1.5, 2, 3, 6).unwrap();
    let g = PhaseGrid::new(SpatialDomain::unit_box(), 5, m).unwrap();
    let f = |p: &PhasePoint| 1.0 + 2.0 * p.x.x - 0.5 * p.x.y + 0.25 * p.x.z + 0.7 * p.k.norm();
    let vals: Vec<f64> = (0..g.n_nodes()).map(|i| f(&g.phase_point(i))).collect();
    for (x, k) in [(Vec3::new(0.13, 0.77, 0.41), Vec3::new(0.3, -0.6, 0.5)), (Vec3::new(0.9, 0.05, 0.5), Vec3::new(0.0, 0.0, 1.2))] {
        let p = PhasePoint::new(x, k);
        let (v, clamped) = g.interpolate(&vals, &p, InterpolationOrder::Linear);
        assert!(!clamped);
        assert_relative_eq!(v, f(&p), epsilon = 1e-12);
    }
}

#[test]
fn cubic_interpolation_reproduces_cubics_in_the_interior() {
    let m = MomentumGrid::single_shell(1.0, 2, 4).unwrap();
    let g = PhaseGrid::new(SpatialDomain::unit_box(), 8, m).unwrap();
    let f = |x: &Vec3| x.x.powi(3) - 2.0 * x.y * x.y * x.z + x.z;
    let vals: Vec<f64> = (0..g.n_nodes()).map(|i| f(&g.phase_point(i).x)).collect();
    let p = PhasePoint::new(Vec3::new(0.43, 0.51, 0.37), Vec3::new(0.0, 0.0, 1.0));
    let (v, _) = g.interpolate(&vals, &p, InterpolationOrder::Cubic);
    assert_relative_eq!(v, f(&p.x), epsilon = 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ball_travel_times_match_ray_sphere_intersection(x in point_in_ball(), d in unit_dir(), nu in 0.5f64..3.0) {
        let vf = VelocityField::constant(nu).unwrap();
        let p = PhasePoint::new(x, d * 1.7);
        let fwd = tau(&unit_ball(), &vf, &p, Sense::Forward);
        let bwd = tau(&unit_ball(), &vf, &p, Sense::Backward);
        prop_assert!((fwd - sphere_exit(&x, &d) / nu).abs() < 1e-12);
        prop_assert!((bwd - sphere_exit(&x, &-d) / nu).abs() < 1e-12);
    }

    #[test]
    fn travel_times_are_additive_along_the_ray(x in point_in_ball(), d in unit_dir(), frac in 0.0f64..0.9) {
        let vf = VelocityField::gaussian_lens(1.0, 0.3, Vec3::new(0.1, 0.0, 0.0), 0.4).unwrap();
        let cfg = FlowConfig::default();
        let p = PhasePoint::new(x, d);
        let t_plus = tau(&unit_ball(), &vf, &p, Sense::Forward);
        let s = frac * t_plus;
        let q = polrte::flow::flow_map(&vf, &p, s, &cfg).unwrap();
        let rest = tau(&unit_ball(), &vf, &q, Sense::Forward);
        prop_assert!((rest - (t_plus - s)).abs() < 1e-8, "{rest} vs {}", t_plus - s);
        let back = tau(&unit_ball(), &vf, &q, Sense::Backward);
        let t_minus = tau(&unit_ball(), &vf, &p, Sense::Backward);
        prop_assert!((back - (t_minus + s)).abs() < 1e-8);
    }

    #[test]
    fn interpolation_weights_reproduce_constants(x in prop::array::uniform3(0.0f64..1.0), d in unit_dir(), r in 0.5f64..1.5) {
        let m = MomentumGrid::gauss_shells(0.5, 1.5, 2, 3, 6).unwrap();
        let g = PhaseGrid::new(SpatialDomain::unit_box(), 4, m).unwrap();
        let vals = vec![2.5; g.n_nodes()];
        let p = PhasePoint::new(Vec3::new(x[0], x[1], x[2]), d * r);
        for order in [InterpolationOrder::Linear, InterpolationOrder::Cubic] {
            let (v, _) = g.interpolate(&vals, &p, order);
            prop_assert!((v - 2.5).abs() < 1e-12);
        }
    }
}

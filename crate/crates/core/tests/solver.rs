use std::sync::Arc;

use polrte::algebra::CoherenceMatrix;
use polrte::diagnostics::fixed_sum;
use polrte::fields::{AnalyticField, Envelope, FnData, PhaseData, TimeProfile};
use polrte::flow::{PhasePoint, Vec3, VelocityField};
use polrte::geometry::{InterpolationOrder, MomentumGrid, PhaseGrid, SpatialDomain};
use polrte::operators::{
    AbsorptionField, CouplingField, PhaseFunction, ScalarProfile, ScatteringKernel, ScatteringOperator, TransferPreset,
};
use polrte::solver::{run, Scenario, Solver, SolverConfig, SolverError};

fn box_grid(cells: usize, np: usize, na: usize) -> PhaseGrid {
    PhaseGrid::new(SpatialDomain::unit_box(), cells, MomentumGrid::single_shell(1.0, np, na).unwrap()).unwrap()
}

fn bump(stokes: CoherenceMatrix, radius: f64) -> AnalyticField {
    AnalyticField::uniform(stokes).with_envelope(Envelope::Bump { center: Vec3::new(0.5, 0.5, 0.5), radius })
}

fn config(dt: f64) -> SolverConfig {
    SolverConfig { dt, ledger_exponents: vec![1.0, 2.0], ..SolverConfig::default() }
}

#[test]
fn zero_final_time_returns_the_initial_field() {
    let w0 = bump(CoherenceMatrix::new(1.0, 0.2, 0.1, 0.0), 0.3);
    let sc = Scenario::new(box_grid(6, 2, 4), VelocityField::constant(1.0).unwrap()).with_initial(Arc::new(w0.clone()));
    let st = run(&sc, 0.0, &config(0.1)).unwrap();
    assert_eq!(st.step, 0);
    assert!(st.ledger.entries.is_empty());
    for (n, w) in st.field.iter().enumerate() {
        assert_eq!(*w, w0.value(&sc.grid.phase_point(n), 0.0));
    }
}

#[test]
fn step_plan_lands_on_the_final_time() {
    let sc = Scenario::new(box_grid(4, 2, 4), VelocityField::constant(1.0).unwrap());
    let s = Solver::new(&sc, config(0.3)).unwrap();
    let plan = s.step_plan(1.0);
    assert_eq!(plan.len(), 4);
    assert!((plan.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    assert!(s.step_plan(0.0).is_empty());
    assert_eq!(s.step_plan(0.9 * (1.0 - 1e-14)).len(), 3);
}

#[test]
fn boundary_data_must_vanish_at_start() {
    let g = AnalyticField::uniform(CoherenceMatrix::new(1.0, 0.0, 0.0, 0.0));
    let sc = Scenario::new(box_grid(4, 2, 4), VelocityField::constant(1.0).unwrap()).with_boundary(Arc::new(g.clone()));
    assert!(matches!(Solver::new(&sc, config(0.1)), Err(SolverError::Compatibility(_))));
    let ramp = g.with_time(TimeProfile::Ramp { rise: 0.5 });
    let sc = Scenario::new(box_grid(4, 2, 4), VelocityField::constant(1.0).unwrap()).with_boundary(Arc::new(ramp));
    assert!(Solver::new(&sc, config(0.1)).is_ok());
}

#[test]
fn cfl_and_configuration_errors() {
    let sc = Scenario::new(box_grid(4, 2, 4), VelocityField::constant(1.0).unwrap());
    assert!(matches!(run(&sc, 1.0, &config(1.0)), Err(SolverError::Cfl { .. })));
    assert!(matches!(Solver::new(&sc, config(0.0)), Err(SolverError::InvalidConfig(_))));
    let cfg = SolverConfig { substeps: 0, ..config(0.1) };
    assert!(matches!(Solver::new(&sc, cfg), Err(SolverError::InvalidConfig(_))));
    let cfg = SolverConfig { ledger_exponents: vec![0.5], ..config(0.1) };
    assert!(matches!(Solver::new(&sc, cfg), Err(SolverError::InvalidConfig(_))));
}

#[test]
fn user_absorption_with_scattering_is_rejected() {
    let grid = box_grid(3, 2, 4);
    let k = ScatteringKernel::new(ScalarProfile::Constant { value: 0.1 }, PhaseFunction::Isotropic, TransferPreset::Identity).unwrap();
    let op = ScatteringOperator::assemble(&k, &grid).unwrap();
    let a = AbsorptionField::user(&ScalarProfile::Constant { value: 0.5 }, &grid).unwrap();
    let sc = Scenario::new(grid, VelocityField::constant(1.0).unwrap()).with_scattering(op).with_absorption(a);
    assert!(matches!(Solver::new(&sc, config(0.1)), Err(SolverError::InvalidScenario(_))));
}

#[test]
fn negative_data_is_rejected_in_positivity_mode() {
    let neg = Arc::new(FnData(|_: &PhasePoint, _: f64| CoherenceMatrix::new(1.0, 2.0, 0.0, 0.0)));
    let sc = Scenario::new(box_grid(4, 2, 4), VelocityField::constant(1.0).unwrap()).with_initial(neg);
    assert!(matches!(Solver::new(&sc, config(0.1)), Err(SolverError::InvalidScenario(_))));
    let cfg = SolverConfig { positivity: false, ..config(0.1) };
    assert!(Solver::new(&sc, cfg).is_ok());
}

#[test]
fn pure_transport_shifts_the_initial_data() {
    // W(t, x, k) = W₀(x − νt k̂) while the support stays inside
    let w0 = bump(CoherenceMatrix::new(1.0, 0.3, -0.2, 0.1), 0.25);
    let nu = 1.3;
    let grid = box_grid(32, 2, 4);
    let sc = Scenario::new(grid, VelocityField::constant(nu).unwrap()).with_initial(Arc::new(w0.clone()));
    let cfg = SolverConfig { order: InterpolationOrder::Cubic, positivity: false, ..config(1.5 / 32.0 / nu) };
    let t = 0.15;
    let st = run(&sc, t, &cfg).unwrap();
    let mut err = 0.0f64;
    for (n, w) in st.field.iter().enumerate() {
        let p = sc.grid.phase_point(n);
        let back = PhasePoint::new(p.x - p.k.normalize() * (nu * t), p.k);
        err = err.max((*w - w0.value(&back, 0.0)).max_abs());
    }
    assert!(err < 0.03, "max error {err}");
}

#[test]
fn linear_transport_keeps_positive_data_positive() {
    let lens = VelocityField::gaussian_lens(1.0, 0.3, Vec3::new(0.5, 0.5, 0.5), 0.3).unwrap();
    let grid = box_grid(8, 2, 4);
    let k = ScatteringKernel::new(
        ScalarProfile::Constant { value: 0.3 },
        PhaseFunction::Rayleigh,
        TransferPreset::RayleighLike,
    )
    .unwrap();
    let op = ScatteringOperator::assemble(&k, &grid).unwrap();
    let w0 = bump(CoherenceMatrix::new(1.0, 0.6, 0.5, 0.6), 0.4).with_anisotropy(0.8, Vec3::new(1.0, 0.0, 0.0));
    let sc = Scenario::new(grid, lens)
        .with_scattering(op)
        .with_coupling(CouplingField::constant(3.0))
        .with_initial(Arc::new(w0));
    let st = run(&sc, 0.5, &config(0.1)).unwrap();
    assert!(st.ledger.min_eigenvalue() >= -1e-10, "{}", st.ledger.min_eigenvalue());
}

#[test]
fn coupling_alone_rotates_a_uniform_field() {
    // with a constant ν a uniform field only rotates until the zero inflow reaches a node
    let w = CoherenceMatrix::new(1.0, 0.5, 0.0, 0.2);
    let grid = box_grid(8, 2, 4);
    let sc = Scenario::new(grid, VelocityField::constant(1.0).unwrap())
        .with_coupling(CouplingField::constant(0.7))
        .with_initial(Arc::new(AnalyticField::uniform(w)));
    let t = 0.1;
    let st = run(&sc, t, &config(0.05)).unwrap();
    let want = polrte::operators::rotate_qu(&w, 2.0 * 0.7 * t);
    let (a, b) = w.eigenvalues();
    let mut checked = 0;
    for (n, x) in st.field.iter().enumerate() {
        if sc.domain().signed_distance(&sc.grid.phase_point(n).x) > -0.2 {
            continue;
        }
        let (c, d) = x.eigenvalues();
        assert!((a - c).abs() < 1e-14 && (b - d).abs() < 1e-14);
        assert!((*x - want).max_abs() < 1e-13);
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn runs_do_not_depend_on_the_thread_count() {
    let lens = VelocityField::gaussian_lens(1.0, 0.3, Vec3::new(0.5, 0.5, 0.5), 0.3).unwrap();
    let grid = box_grid(6, 2, 4);
    let k = ScatteringKernel::new(ScalarProfile::Constant { value: 0.3 }, PhaseFunction::Rayleigh, TransferPreset::RayleighLike).unwrap();
    let op = ScatteringOperator::assemble(&k, &grid).unwrap();
    let w0 = bump(CoherenceMatrix::new(1.0, 0.4, 0.2, 0.1), 0.4);
    let sc = Scenario::new(grid, lens).with_scattering(op).with_initial(Arc::new(w0));
    let go = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let st = run(&sc, 0.3, &config(0.1)).unwrap();
            let mut csv = Vec::new();
            st.ledger.write_csv(&mut csv).unwrap();
            (st.field, csv)
        })
    };
    let (f1, c1) = go(1);
    let (f3, c3) = go(3);
    assert_eq!(f1, f3);
    assert_eq!(c1, c3);
}

#[test]
fn fixed_sum_is_independent_of_the_thread_count() {
    let f = |i: usize| ((i as f64) * 0.37).sin() * 10f64.powi((i % 17) as i32 - 8);
    let sums: Vec<f64> = [1, 2, 5]
        .iter()
        .map(|&t| rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap().install(|| fixed_sum(100_003, f)))
        .collect();
    assert!(sums.iter().all(|s| s.to_bits() == sums[0].to_bits()));
}

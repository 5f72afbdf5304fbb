use std::path::PathBuf;

use polrte::algebra::CoherenceMatrix;
use polrte::config::{load, parse_str, BuildError};
use polrte::geometry::{MomentumGrid, PhaseGrid, SpatialDomain};
use polrte::io::{read_dump, read_dump_file, write_dump, DumpWriter, MAGIC};
use polrte::solver::{run, SolverError, Solver};
use polrte::verify::random_field;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn grid() -> PhaseGrid {
    PhaseGrid::new(SpatialDomain::unit_box(), 3, MomentumGrid::gauss_shells(0.5, 1.5, 2, 2, 4).unwrap()).unwrap()
}

#[test]
fn dump_round_trip_is_exact() {
    let g = grid();
    let f = random_field(g.n_nodes(), 9);
    let mut buf = Vec::new();
    write_dump(&mut buf, &g, &f, 17, 0.125).unwrap();
    assert_eq!(&buf[..8], MAGIC);
    let d = read_dump(&buf[..]).unwrap();
    assert_eq!(d.step, 17);
    assert_eq!(d.time, 0.125);
    assert_eq!(d.field, f);
    assert_eq!(d.radii, g.momentum.radii());
    assert_eq!(d.directions, g.momentum.directions());
    assert_eq!(d.positions.len(), g.n_space());
    assert_eq!(d.n_nodes(), g.n_nodes());
}

#[test]
fn corrupt_dumps_are_rejected() {
    let g = grid();
    let f = vec![CoherenceMatrix::IDENTITY; g.n_nodes()];
    let mut buf = Vec::new();
    write_dump(&mut buf, &g, &f, 0, 0.0).unwrap();
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(read_dump(&bad[..]).is_err());
    assert!(read_dump(&buf[..buf.len() - 8]).is_err());
    let mut long = buf.clone();
    long.push(0);
    assert!(read_dump(&long[..]).is_err());
}

#[test]
fn dump_writer_keeps_an_index() {
    let dir = tempfile::tempdir().unwrap();
    let g = grid();
    let f = random_field(g.n_nodes(), 1);
    let mut w = DumpWriter::create(&dir.path().join("dumps")).unwrap();
    let a = w.dump(&g, &f, 0, 0.0).unwrap();
    let b = w.dump(&g, &f, 5, 0.5).unwrap();
    drop(w);
    assert_eq!(read_dump_file(&a).unwrap().field, f);
    assert_eq!(read_dump_file(&b).unwrap().step, 5);
    let index = std::fs::read_to_string(dir.path().join("dumps/index.csv")).unwrap();
    let lines: Vec<&str> = index.lines().collect();
    assert_eq!(lines[0], "file,step,time,n_nodes,bytes");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("field_000005.bin,5,"));
}

#[test]
fn shipped_scenarios_build() {
    for name in ["lens.toml", "box_transport.toml", "empty.toml"] {
        let b = load(&scenario(name)).unwrap().build().unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(Solver::new(&b.scenario, b.solver.clone()).is_ok(), "{name}");
    }
}

#[test]
fn broken_kernel_is_a_kernel_error() {
    match load(&scenario("broken_kernel.toml")).unwrap().build() {
        Err(BuildError::Kernel(e)) => assert!(e.message.contains("symmetry"), "{}", e.message),
        Err(e) => panic!("wrong error: {e}"),
        Ok(_) => panic!("broken kernel accepted"),
    }
}

#[test]
fn empty_run_has_no_steps() {
    let b = load(&scenario("empty.toml")).unwrap().build().unwrap();
    assert_eq!(b.t_final, 0.0);
    let st = run(&b.scenario, b.t_final, &b.solver).unwrap();
    assert!(st.ledger.entries.is_empty());
}

#[test]
fn ledger_csv_has_one_row_per_step() {
    let b = load(&scenario("box_transport.toml")).unwrap().build().unwrap();
    let cfg = polrte::solver::SolverConfig { ledger_exponents: vec![1.0, 2.0], ..b.solver.clone() };
    let st = run(&b.scenario, 3.0 * cfg.dt, &cfg).unwrap();
    let mut out = Vec::new();
    st.ledger.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    let header: Vec<&str> = lines[0].split(',').collect();
    assert_eq!(header[..3], ["step", "t", "bulk_norm_p1"]);
    assert_eq!(header.len(), 2 + 2 * 8 + 2);
    assert!(header.contains(&"conservation_residual_p2") && header.contains(&"dissipation_margin_p2"));
    assert_eq!(*header.last().unwrap(), "clamped_stencils");
}

#[test]
fn config_errors_carry_line_numbers() {
    let src = std::fs::read_to_string(scenario("empty.toml")).unwrap();
    let bad = src.replacen("[grid]", "[grid]\nspacing = 3", 1);
    let line = bad.lines().position(|l| l.starts_with("spacing")).unwrap() + 1;
    let e = parse_str(&bad, None).err().expect("unknown key accepted");
    assert_eq!(e.line, Some(line));
    assert!(e.to_string().starts_with(&format!("<config>:{line}:")), "{e}");
    let missing = load(&scenario("no_such_file.toml")).err().unwrap();
    assert!(missing.message.contains("cannot read"));
}

#[test]
fn incompatible_boundary_data_is_reported_by_the_solver() {
    let src = std::fs::read_to_string(scenario("box_transport.toml")).unwrap();
    let b = parse_str(&src, None).unwrap().build().unwrap();
    assert!(b.scenario.boundary.is_some());
    // the shipped boundary ramps up from zero; a constant profile does not
    let g = polrte::fields::AnalyticField::uniform(CoherenceMatrix::new(1.0, 0.0, 0.0, 0.0));
    let sc = b.scenario.clone().with_boundary(std::sync::Arc::new(g));
    assert!(matches!(Solver::new(&sc, b.solver.clone()), Err(SolverError::Compatibility(_))));
}

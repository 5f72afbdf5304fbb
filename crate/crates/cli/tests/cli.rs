use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn polrte(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polrte")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Writes `src` into `dir` and returns the path as a string.
fn write_config(dir: &Path, name: &str, src: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, src).unwrap();
    p.to_str().unwrap().to_owned()
}

fn small_lens(dir: &Path) -> String {
    let src = std::fs::read_to_string(scenario("lens.toml"))
        .unwrap()
        .replace("cells = 12", "cells = 6")
        .replace("n_polar = 4", "n_polar = 2")
        .replace("n_azimuth = 8", "n_azimuth = 4")
        .replace("t_final = 1.0", "t_final = 0.3");
    write_config(dir, "lens_small.toml", &src)
}

#[test]
fn empty_scenario_writes_only_the_initial_dump() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = polrte(&["simulate", "--config", scenario("empty.toml").to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("steps 0"));
    let index = std::fs::read_to_string(out.join("dumps/index.csv")).unwrap();
    assert_eq!(index.lines().count(), 2);
    assert!(out.join("dumps/field_000000.bin").exists());
    let diag = std::fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 1);
}

#[test]
fn missing_config_is_a_configuration_error() {
    assert_eq!(code(&polrte(&["simulate"])), 2);
    assert_eq!(code(&polrte(&["simulate", "--config", "/no/such/file.toml"])), 2);
}

#[test]
fn nonzero_initial_boundary_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let src = std::fs::read_to_string(scenario("box_transport.toml"))
        .unwrap()
        .replace("time = { kind = \"ramp\", rise = 0.3 }\n", "")
        .replace("cells = 32", "cells = 4");
    let cfg = write_config(dir.path(), "g0.toml", &src);
    let o = polrte(&["simulate", "--config", &cfg, "--out-dir", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn broken_kernel_fails_verification_and_refuses_to_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("broken_kernel.toml");
    let out = dir.path().to_str().unwrap();
    let v = polrte(&["verify", "operators", "--config", cfg.to_str().unwrap(), "--out-dir", out, "--fields", "4"]);
    assert_eq!(code(&v), 1, "{}{}", stdout(&v), stderr(&v));
    assert!(stdout(&v).contains("FAIL"));
    assert!(dir.path().join("verify_operators.csv").exists());
    let s = polrte(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", out]);
    assert_eq!(code(&s), 3);
    assert!(stderr(&s).contains("symmetry"), "{}", stderr(&s));
}

#[test]
fn unknown_keys_report_their_line() {
    let dir = tempfile::tempdir().unwrap();
    let src = std::fs::read_to_string(scenario("empty.toml")).unwrap().replacen("[grid]", "[grid]\nspacing = 3", 1);
    let line = src.lines().position(|l| l.starts_with("spacing")).unwrap() + 1;
    let cfg = write_config(dir.path(), "bad.toml", &src);
    let o = polrte(&["simulate", "--config", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains(&format!("bad.toml:{line}:")), "{}", stderr(&o));
}

fn trace_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn trace_in_constant_speed_is_a_straight_line() {
    let cfg = scenario("empty.toml");
    let o = polrte(&["trace", "--config", cfg.to_str().unwrap(), "--x", "0.2,0.5,0.5", "--k", "1,0,0", "--t-final", "0.5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("t,x1,x2,x3,k1,k2,k3,H"));
    let rows = trace_rows(&text);
    assert!(rows.len() > 2);
    let last = rows.last().unwrap();
    assert!((last[0] - 0.5).abs() < 1e-12);
    for r in &rows {
        assert!((r[1] - (0.2 + r[0])).abs() < 1e-12);
        assert!((r[2] - 0.5).abs() < 1e-14 && (r[3] - 0.5).abs() < 1e-14);
        assert!((r[7] - rows[0][7]).abs() < 1e-12);
    }
    // leaving from the inflow face has no history
    let b = polrte(&["trace", "--config", cfg.to_str().unwrap(), "--x", "0,0.5,0.5", "--k", "1,0,0", "--t-final", "0.1"]);
    assert_eq!(code(&b), 0);
    assert!(stderr(&b).contains("tau_minus = 0.000000000000e0"), "{}", stderr(&b));
}

#[test]
fn trace_in_the_lens_conserves_the_hamiltonian() {
    let cfg = scenario("lens.toml");
    let o = polrte(&["trace", "--config", cfg.to_str().unwrap(), "--x", "0.3,0.45,0.5", "--k", "0.6,0.2,0.1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = trace_rows(&stdout(&o));
    assert!(rows.len() > 10);
    for r in &rows {
        assert!((r[7] - rows[0][7]).abs() < 1e-8, "{} vs {}", r[7], rows[0][7]);
    }
}

#[test]
fn trace_outside_the_domain_exits_2() {
    let cfg = scenario("lens.toml");
    let o = polrte(&["trace", "--config", cfg.to_str().unwrap(), "--x", "2,2,2", "--k", "1,0,0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn inequality_runs_are_deterministic_and_replayable() {
    let a = polrte(&["inequalities", "--count", "1", "--seed", "5"]);
    let b = polrte(&["inequalities", "--count", "1", "--seed", "5"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    let line = text.lines().find(|l| l.contains(" sandwich ")).unwrap();
    let path = line.split_whitespace().skip_while(|w| *w != "worst").nth(1).unwrap();
    let r = polrte(&["inequalities", "--replay", path]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert!(stdout(&r).starts_with(path) && stdout(&r).trim_end().ends_with("PASS"));
    assert_eq!(code(&polrte(&["inequalities", "--replay", "no_such:1"])), 2);
    assert_eq!(code(&polrte(&["inequalities", "--count", "0"])), 2);
}

#[test]
fn diagnostics_do_not_depend_on_the_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_lens(dir.path());
    let run = |threads: &str| {
        let out = dir.path().join(format!("t{threads}"));
        let o = polrte(&["simulate", "--config", &cfg, "--threads", threads, "--out-dir", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let mut dumps: Vec<_> = std::fs::read_dir(out.join("dumps")).unwrap().map(|e| e.unwrap().path()).collect();
        dumps.sort();
        let dumps: Vec<Vec<u8>> = dumps.iter().map(|p| std::fs::read(p).unwrap()).collect();
        (std::fs::read(out.join("diagnostics.csv")).unwrap(), dumps)
    };
    let one = run("1");
    assert!(one.0.len() > 100);
    assert_eq!(one, run("1"));
    assert_eq!(one, run("3"));
}

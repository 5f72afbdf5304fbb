//! `polrte` command-line driver.
//!
//! Exit codes: 0 ok, 1 invariant breach or failed check, 2 configuration error,
//! 3 inadmissible scattering kernel.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use polrte::config::{self, BuildError, Built, ConfigError, Loaded};
use polrte::flow::{hamiltonian, trajectory, PhasePoint, Vec3};
use polrte::geometry::{travel_time, Sense, TransformResolution, TravelTime};
use polrte::io::DumpWriter;
use polrte::operators::CouplingField;
use polrte::verify::{self, Check, FlowSuiteParams, SeedPath};
use polrte::{Solver, SolverError};

const EXIT_BREACH: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_KERNEL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "polrte", version, about = "Polarized radiative transfer runs and invariant checks")]
struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir` from the scenario.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Abort on the first invariant breach.
    #[arg(long, global = true)]
    strict: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Random seed; overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario, writing field dumps and the diagnostics CSV.
    Simulate,
    /// Run one invariant suite and write a pass/fail report.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
        /// Random characteristics (flow) or boundary samples (geometry).
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Random fields for the operator bounds.
        #[arg(long, default_value_t = 100)]
        fields: usize,
        /// Probe points for the oracle comparison.
        #[arg(long, default_value_t = 50)]
        probes: usize,
    },
    /// Trace one characteristic and print it as CSV.
    Trace {
        /// Start position `x1,x2,x3`.
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        x: Vec3,
        /// Start momentum `k1,k2,k3`.
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        k: Vec3,
        /// Duration; defaults to the scenario `t_final`.
        #[arg(long)]
        t_final: Option<f64>,
        /// Keep every n-th integration step.
        #[arg(long, default_value_t = 1)]
        every: usize,
    },
    /// Random-matrix and operator inequality batteries.
    Inequalities {
        #[arg(long, default_value_t = 100_000)]
        count: usize,
        /// Re-evaluate one sample given as `battery:seed`.
        #[arg(long)]
        replay: Option<SeedPath>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Suite {
    Flow,
    Geometry,
    Operators,
    Solver,
    Energy,
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [a, b, c] => Ok(Vec3::new(a, b, c)),
        _ => Err(format!("expected three comma-separated numbers, got {}", v.len())),
    }
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<BuildError> for Failure {
    fn from(e: BuildError) -> Self {
        match e {
            BuildError::Config(e) => Failure::new(EXIT_CONFIG, e.to_string()),
            BuildError::Kernel(e) => Failure::new(EXIT_KERNEL, e.to_string()),
        }
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        let code = match e {
            SolverError::Compatibility(_)
            | SolverError::Cfl { .. }
            | SolverError::InvalidConfig(_)
            | SolverError::InvalidScenario(_) => EXIT_CONFIG,
            SolverError::Operator(_) => EXIT_KERNEL,
            _ => EXIT_BREACH,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::new(EXIT_BREACH, format!("i/o error: {e}"))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::new(EXIT_BREACH, format!("csv error: {e}"))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Simulate => simulate(cli),
        Command::Verify { suite, samples, fields, probes } => verify_suite(cli, *suite, *samples, *fields, *probes),
        Command::Trace { x, k, t_final, every } => trace(cli, *x, *k, *t_final, *every),
        Command::Inequalities { count, replay } => inequalities(cli, *count, replay.as_ref()),
    }
}

fn load(cli: &Cli) -> Result<Loaded, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::new(EXIT_CONFIG, "--config is required for this command"))?;
    Ok(config::load(path)?)
}

fn out_dir(cli: &Cli, loaded: Option<&Loaded>) -> PathBuf {
    cli.out_dir
        .clone()
        .or_else(|| loaded.map(|l| l.config.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::new(EXIT_BREACH, format!("cannot create {}: {e}", dir.display())))
}

fn simulate(cli: &Cli) -> Result<u8, Failure> {
    let loaded = load(cli)?;
    let mut built = loaded.build()?;
    if cli.strict {
        built.solver.strict = true;
    }
    let dir = out_dir(cli, Some(&loaded));
    create_dir(&dir)?;
    let solver = Solver::new(&built.scenario, built.solver.clone())?;
    let grid = &built.scenario.grid;
    let mut dumps = if built.output.dumps { Some(DumpWriter::create(&dir.join("dumps"))?) } else { None };
    let init = solver.initial_state();
    if let Some(w) = dumps.as_mut() {
        w.dump(grid, &init.field, 0, init.time)?;
    }
    let every = built.output.dump_every;
    let plan = solver.step_plan(built.t_final);
    let n_steps = plan.len();
    info!("{} steps on {} nodes", n_steps, grid.n_nodes());
    let mut state = init;
    let mut outcome = Ok(());
    for dt in plan {
        if let Err(e) = solver.step(&mut state, dt) {
            outcome = Err(e);
            break;
        }
        let last = state.step == n_steps;
        if let Some(w) = dumps.as_mut() {
            if last || (every > 0 && state.step % every == 0) {
                w.dump(grid, &state.field, state.step as u64, state.time)?;
            }
        }
    }
    state.ledger.write_csv(File::create(dir.join("diagnostics.csv"))?)?;
    outcome?;
    let mut report = io::stdout().lock();
    writeln!(report, "steps {}  t {:.6e}  nodes {}", state.step, state.time, grid.n_nodes())?;
    for (j, p) in state.ledger.exponents.iter().enumerate() {
        let res = state.ledger.conservation_residuals(*p).last().map_or(0.0, |r| r.1);
        let margin = state.ledger.dissipation_margins(*p).last().map_or(0.0, |r| r.1);
        let bulk = state.ledger.entries.last().map_or(state.ledger.initial[j], |e| e.bulk[j]);
        writeln!(report, "p {p}: bulk {bulk:.6e}  balance residual {res:.3e}  dissipation margin {margin:.3e}")?;
    }
    writeln!(
        report,
        "min eigenvalue {:.3e}  positivity warnings {}",
        state.ledger.min_eigenvalue(),
        state.positivity_warnings
    )?;
    Ok(0)
}

fn verify_suite(cli: &Cli, suite: Suite, samples: usize, fields: usize, probes: usize) -> Result<u8, Failure> {
    let loaded = load(cli)?;
    let seed = cli.seed.unwrap_or(loaded.config.seed);
    let checks: Vec<Check> = match suite {
        Suite::Flow => {
            let vf = loaded.velocity()?;
            let params = FlowSuiteParams { samples, jacobian_samples: samples, seed, ..FlowSuiteParams::default() };
            verify::flow_suite(&vf, &loaded.domain()?, &loaded.flow_config()?, &params)
        }
        Suite::Geometry => verify::geometry_suite(
            &loaded.domain()?,
            &loaded.velocity()?,
            &loaded.flow_config()?,
            samples,
            &TransformResolution::default(),
            seed,
        ),
        Suite::Operators => {
            // the kernel is checked here rather than rejected at build time
            let grid = loaded.phase_grid()?;
            let kernel = match &loaded.config.scattering {
                Some(s) => s.kernel().map_err(|e| Failure::new(EXIT_KERNEL, e.to_string()))?,
                None => verify::default_kernel(),
            };
            let coupling = loaded.coupling()?.unwrap_or_else(|| CouplingField::constant(1.0));
            verify::operators_suite(&kernel, &coupling, &grid, fields, seed)
        }
        Suite::Solver => verify::solver_suite(&build_for_verify(cli, &loaded)?, probes, seed),
        Suite::Energy => verify::energy_suite(&build_for_verify(cli, &loaded)?),
    };
    let dir = out_dir(cli, Some(&loaded));
    create_dir(&dir)?;
    let name = format!("verify_{}.csv", suite_name(suite));
    verify::write_checks_csv(&checks, File::create(dir.join(&name))?)?;
    let mut out = io::stdout().lock();
    for c in &checks {
        writeln!(out, "{c}")?;
    }
    let passed = checks.iter().filter(|c| c.pass).count();
    writeln!(out, "{passed}/{} checks passed; report in {}", checks.len(), dir.join(name).display())?;
    Ok(if verify::all_pass(&checks) { 0 } else { EXIT_BREACH })
}

fn build_for_verify(cli: &Cli, loaded: &Loaded) -> Result<Built, Failure> {
    let mut built = loaded.build()?;
    if cli.strict {
        built.solver.strict = true;
    }
    Ok(built)
}

fn suite_name(s: Suite) -> &'static str {
    match s {
        Suite::Flow => "flow",
        Suite::Geometry => "geometry",
        Suite::Operators => "operators",
        Suite::Solver => "solver",
        Suite::Energy => "energy",
    }
}

fn trace(cli: &Cli, x: Vec3, k: Vec3, t_final: Option<f64>, every: usize) -> Result<u8, Failure> {
    let loaded = load(cli)?;
    let domain = loaded.domain()?;
    let vf = loaded.velocity()?;
    let cfg = loaded.flow_config()?;
    let p0 = PhasePoint::new(x, k);
    let t = t_final.unwrap_or(loaded.config.t_final);
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Failure::new(EXIT_CONFIG, format!("trace duration must be nonnegative, got {t}")));
    }
    let tau = |sense| travel_time(&domain, &vf, &p0, sense, &cfg, None).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()));
    let (fwd, bwd) = (tau(Sense::Forward)?, tau(Sense::Backward)?);
    let show = |tt: &TravelTime| match tt {
        TravelTime::Finite { time, .. } => format!("{time:.12e}"),
        TravelTime::Horizon { horizon } => format!("> {horizon:.6e} (no exit)"),
    };
    eprintln!("tau_plus = {}", show(&fwd));
    eprintln!("tau_minus = {}", show(&bwd));
    // the ray is followed until it leaves the domain
    let t_end = if fwd.is_finite() { t.min(fwd.time()) } else { t };
    let traj = trajectory(&vf, &p0, t_end, &cfg, every).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    let sink: Box<dyn Write> = match &cli.out_dir {
        Some(d) => {
            create_dir(d)?;
            Box::new(File::create(d.join("trajectory.csv"))?)
        }
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["t", "x1", "x2", "x3", "k1", "k2", "k3", "H"])?;
    for (s, p) in &traj {
        let h = hamiltonian(&vf, p).map_err(|e| Failure::new(EXIT_BREACH, e.to_string()))?;
        let row = [*s, p.x[0], p.x[1], p.x[2], p.k[0], p.k[1], p.k[2], h];
        w.write_record(row.iter().map(|v| format!("{v:.17e}")))?;
    }
    w.flush()?;
    Ok(0)
}

fn inequalities(cli: &Cli, count: usize, replay: Option<&SeedPath>) -> Result<u8, Failure> {
    if count == 0 {
        return Err(Failure::new(EXIT_CONFIG, "--count must be at least 1"));
    }
    let mut out = io::stdout().lock();
    if let Some(path) = replay {
        if !verify::BATTERIES.contains(&path.battery.as_str()) {
            return Err(Failure::new(EXIT_CONFIG, format!("unknown battery {:?}", path.battery)));
        }
        let bench = verify::OperatorBench::new();
        let (lhs, rhs, p) = verify::evaluate_sample(&path.battery, path.seed, Some(&bench))
            .map_err(|e| Failure::new(EXIT_BREACH, format!("{path}: {e}")))?;
        let (excess, bad) = verify::sample_excess(&path.battery, lhs, rhs);
        writeln!(out, "{path}  p {p}  lhs {lhs:.17e}  rhs {rhs:.17e}  excess {excess:.3e}  {}", verdict(!bad))?;
        return Ok(if bad { EXIT_BREACH } else { 0 });
    }
    let seed = cli.seed.unwrap_or(0);
    let stats = verify::inequality_report(count, seed);
    for s in &stats {
        write!(out, "{} {:<34} samples {:>7}  violations {:>5}  max excess {:.3e}", verdict(s.pass()), s.battery, s.samples, s.violations, s.max_excess)?;
        if s.errors > 0 {
            write!(out, "  errors {}", s.errors)?;
        }
        if let Some(p) = &s.first_violation {
            write!(out, "  replay {p}")?;
        } else if let Some(p) = &s.worst {
            write!(out, "  worst {p}")?;
        }
        writeln!(out)?;
    }
    if let Some(d) = &cli.out_dir {
        create_dir(d)?;
        verify::write_battery_csv(&stats, File::create(d.join("inequalities.csv"))?)?;
    }
    Ok(if stats.iter().all(|s| s.pass()) { 0 } else { EXIT_BREACH })
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

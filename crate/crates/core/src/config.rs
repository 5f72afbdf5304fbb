//! TOML scenario files.
//!
//! Unknown keys are rejected. Parse errors and semantic errors carry the line
//! of the offending key or table so they can be reported as `file:line`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::algebra::CoherenceMatrix;
use crate::fields::{AnalyticField, Envelope, PhaseData, TimeProfile};
use crate::flow::{FlowConfig, Integrator, Vec3, VelocityField, VelocityProfile};
use crate::geometry::{InterpolationOrder, MomentumGrid, PhaseGrid, SpatialDomain};
use crate::operators::{
    AbsorptionField, CouplingField, OperatorError, PhaseFunction, ScalarProfile, ScatteringKernel,
    ScatteringOperator, TransferPreset,
};
use crate::solver::{Scenario, SolverConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub file: Option<PathBuf>,
    /// 1-based line, when known.
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let file = self.file.as_ref().map_or("<config>".to_string(), |p| p.display().to_string());
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{file}:{l}:{c}: {}", self.message),
            (Some(l), None) => write!(f, "{file}:{l}: {}", self.message),
            _ => write!(f, "{file}: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Why a scenario could not be built.
#[derive(Debug)]
pub enum BuildError {
    Config(ConfigError),
    /// The scattering kernel failed the admissibility checks.
    Kernel(ConfigError),
}

impl fmt::Display for BuildError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuildError::Config(e) => write!(f, "{e}"),
            BuildError::Kernel(e) => write!(f, "inadmissible kernel: {e}"),
        }
    }
}

impl std::error::Error for BuildError {}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub t_final: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub domain: DomainSpec,
    pub velocity: VelocitySpec,
    pub grid: GridSpec,
    #[serde(default)]
    pub coupling: Option<CouplingSpec>,
    #[serde(default)]
    pub scattering: Option<ScatteringSpec>,
    #[serde(default)]
    pub absorption: Option<ProfileSpec>,
    #[serde(default)]
    pub initial: Option<FieldSpec>,
    #[serde(default)]
    pub source: Option<FieldSpec>,
    #[serde(default)]
    pub boundary: Option<FieldSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Ball { center: [f64; 3], radius: f64 },
    Box { lo: [f64; 3], hi: [f64; 3] },
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocitySpec {
    Constant { value: f64 },
    Lens { base: f64, depth: f64, center: [f64; 3], width: f64 },
    Ramp { origin: [f64; 3], gradient: [f64; 3], low: f64, high: f64 },
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub cells: usize,
    /// `[k_lo, k_hi]`; a single shell sits at `k_lo` when the two are equal.
    #[serde(default = "default_k_range")]
    pub k_range: [f64; 2],
    #[serde(default = "one")]
    pub shells: usize,
    pub n_polar: usize,
    pub n_azimuth: usize,
}

fn default_k_range() -> [f64; 2] {
    [1.0, 1.0]
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    Constant { value: f64 },
    Gaussian { base: f64, amplitude: f64, center: [f64; 3], width: f64 },
}

impl ProfileSpec {
    fn build(&self) -> ScalarProfile {
        match self {
            ProfileSpec::Constant { value } => ScalarProfile::Constant { value: *value },
            ProfileSpec::Gaussian { base, amplitude, center, width } => {
                ScalarProfile::Gaussian { base: *base, amplitude: *amplitude, center: v3(center), width: *width }
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    pub spatial: ProfileSpec,
    #[serde(default)]
    pub directional: f64,
    #[serde(default = "z_axis")]
    pub axis: [f64; 3],
}

fn z_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhaseSpec {
    Isotropic,
    Rayleigh,
    HenyeyGreenstein { g: f64 },
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum TransferSpec {
    Identity,
    RayleighLike,
}

/// Kernel presets; `rayleigh_like` is Rayleigh phase with the plane-rotation transfer.
#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum KernelPreset {
    Isotropic,
    RayleighLike,
    HenyeyGreenstein,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScatteringSpec {
    pub strength: ProfileSpec,
    #[serde(default)]
    pub preset: Option<KernelPreset>,
    /// Asymmetry parameter for the Henyey–Greenstein preset.
    #[serde(default)]
    pub g: Option<f64>,
    #[serde(default)]
    pub phase: Option<PhaseSpec>,
    #[serde(default)]
    pub transfer: Option<TransferSpec>,
    /// Deliberate asymmetry of `T`, for negative tests.
    #[serde(default)]
    pub symmetry_defect: f64,
}

impl ScatteringSpec {
    pub fn kernel(&self) -> Result<ScatteringKernel, OperatorError> {
        let (mut phase, mut transfer) = match self.preset {
            None | Some(KernelPreset::Isotropic) => (PhaseFunction::Isotropic, TransferPreset::Identity),
            Some(KernelPreset::RayleighLike) => (PhaseFunction::Rayleigh, TransferPreset::RayleighLike),
            Some(KernelPreset::HenyeyGreenstein) => {
                (PhaseFunction::HenyeyGreenstein { g: self.g.unwrap_or(0.0) }, TransferPreset::Identity)
            }
        };
        if let Some(p) = self.phase {
            phase = match p {
                PhaseSpec::Isotropic => PhaseFunction::Isotropic,
                PhaseSpec::Rayleigh => PhaseFunction::Rayleigh,
                PhaseSpec::HenyeyGreenstein { g } => PhaseFunction::HenyeyGreenstein { g },
            };
        }
        if let Some(t) = self.transfer {
            transfer = match t {
                TransferSpec::Identity => TransferPreset::Identity,
                TransferSpec::RayleighLike => TransferPreset::RayleighLike,
            };
        }
        Ok(ScatteringKernel::new(self.strength.build(), phase, transfer)?.with_symmetry_defect(self.symmetry_defect))
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvelopeSpec {
    Uniform,
    Bump { center: [f64; 3], radius: f64 },
    Gaussian { center: [f64; 3], width: f64 },
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeSpec {
    Constant,
    Ramp { rise: f64 },
    Pulse { period: f64 },
}

/// Named analytic field, see [`AnalyticField`].
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    /// `[I, Q, U, V]`.
    pub stokes: [f64; 4],
    #[serde(default = "uniform")]
    pub envelope: EnvelopeSpec,
    #[serde(default)]
    pub anisotropy: f64,
    #[serde(default = "z_axis")]
    pub axis: [f64; 3],
    #[serde(default)]
    pub twist: f64,
    #[serde(default)]
    pub k_window: Option<[f64; 2]>,
    #[serde(default = "constant_time")]
    pub time: TimeSpec,
}

fn uniform() -> EnvelopeSpec {
    EnvelopeSpec::Uniform
}

fn constant_time() -> TimeSpec {
    TimeSpec::Constant
}

impl FieldSpec {
    pub fn build(&self) -> AnalyticField {
        let [i, q, u, v] = self.stokes;
        let envelope = match &self.envelope {
            EnvelopeSpec::Uniform => Envelope::Uniform,
            EnvelopeSpec::Bump { center, radius } => Envelope::Bump { center: v3(center), radius: *radius },
            EnvelopeSpec::Gaussian { center, width } => Envelope::Gaussian { center: v3(center), width: *width },
        };
        let time = match self.time {
            TimeSpec::Constant => TimeProfile::Constant,
            TimeSpec::Ramp { rise } => TimeProfile::Ramp { rise },
            TimeSpec::Pulse { period } => TimeProfile::Pulse { period },
        };
        let mut f = AnalyticField::uniform(CoherenceMatrix::new(i, q, u, v)).with_envelope(envelope).with_time(time);
        f.anisotropy = self.anisotropy;
        f.axis = v3(&self.axis).normalize();
        f.twist = self.twist;
        f.k_window = self.k_window.map(|[a, b]| (a, b));
        f
    }

    fn check(&self) -> Result<(), String> {
        if self.stokes.iter().any(|s| !s.is_finite()) {
            return Err("stokes entries must be finite".into());
        }
        if v3(&self.axis).norm() == 0.0 {
            return Err("axis must be nonzero".into());
        }
        match &self.envelope {
            EnvelopeSpec::Bump { radius, .. } if !(*radius > 0.0) => return Err("bump radius must be positive".into()),
            EnvelopeSpec::Gaussian { width, .. } if !(*width > 0.0) => {
                return Err("gaussian width must be positive".into())
            }
            _ => {}
        }
        match self.time {
            TimeSpec::Ramp { rise } if !(rise > 0.0) => return Err("ramp rise must be positive".into()),
            TimeSpec::Pulse { period } if !(period > 0.0) => return Err("pulse period must be positive".into()),
            _ => {}
        }
        if let Some([a, b]) = self.k_window {
            if !(0.0 <= a && a < b) {
                return Err(format!("k_window needs 0 ≤ a < b, got [{a}, {b}]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorSpec {
    Rk4,
    Heun,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    #[serde(default = "flow_dt")]
    pub dt_base: f64,
    #[serde(default = "rk4")]
    pub integrator: IntegratorSpec,
    #[serde(default = "event_tol")]
    pub event_tol: f64,
    #[serde(default = "jac_step")]
    pub jac_fd_step: f64,
}

fn flow_dt() -> f64 {
    FlowConfig::default().dt_base
}
fn rk4() -> IntegratorSpec {
    IntegratorSpec::Rk4
}
fn event_tol() -> f64 {
    FlowConfig::default().event_tol
}
fn jac_step() -> f64 {
    FlowConfig::default().jac_fd_step
}

impl Default for FlowSpec {
    fn default() -> Self {
        FlowSpec { dt_base: flow_dt(), integrator: rk4(), event_tol: event_tol(), jac_fd_step: jac_step() }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default)]
    pub dt: Option<f64>,
    /// `dt` as a multiple of `h_min/ν_max`; ignored when `dt` is given.
    #[serde(default)]
    pub cfl: Option<f64>,
    #[serde(default = "one")]
    pub trotter_substeps: usize,
    #[serde(default = "order_one")]
    pub interp_order: u32,
    #[serde(default = "yes")]
    pub positivity: bool,
    #[serde(default = "pos_tol")]
    pub pos_tol: f64,
    #[serde(default = "cfl_limit")]
    pub cfl_limit: f64,
    #[serde(default = "exponents")]
    pub ledger_exponents: Vec<f64>,
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub surface_resolution: Option<usize>,
    #[serde(default = "dissipation_tol")]
    pub dissipation_tol: f64,
    #[serde(default)]
    pub flow: FlowSpec,
}

fn order_one() -> u32 {
    1
}
fn yes() -> bool {
    true
}
fn pos_tol() -> f64 {
    SolverConfig::default().pos_tol
}
fn cfl_limit() -> f64 {
    SolverConfig::default().cfl_limit
}
fn exponents() -> Vec<f64> {
    SolverConfig::default().ledger_exponents
}
fn dissipation_tol() -> f64 {
    SolverConfig::default().dissipation_tol
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec {
            dt: None,
            cfl: None,
            trotter_substeps: 1,
            interp_order: 1,
            positivity: true,
            pos_tol: pos_tol(),
            cfl_limit: cfl_limit(),
            ledger_exponents: exponents(),
            strict: false,
            surface_resolution: None,
            dissipation_tol: dissipation_tol(),
            flow: FlowSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "out_dir")]
    pub dir: PathBuf,
    /// Dump the field every this many steps; 0 dumps only the first and last state.
    #[serde(default)]
    pub dump_every: usize,
    #[serde(default = "yes")]
    pub dumps: bool,
}

fn out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: out_dir(), dump_every: 0, dumps: true }
    }
}

fn v3(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

/// 1-based (line, column) of byte offset `pos`.
fn line_col(src: &str, pos: usize) -> (usize, usize) {
    let pos = pos.min(src.len());
    let before = &src[..pos];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(pos, |i| pos - i - 1) + 1;
    (line, col)
}

/// Line of the `[table]` header (or the first `table.` key) in `src`.
fn table_line(src: &str, table: &str) -> Option<usize> {
    let header = format!("[{table}]");
    let dotted = format!("{table}.");
    src.lines().position(|l| {
        let t = l.trim_start();
        t.starts_with(&header) || t.starts_with(&dotted) || t.starts_with(&format!("{table} ="))
    })
    .map(|i| i + 1)
}

/// Line of `key = ...` inside `[table]` (top level for an empty table name).
fn key_line(src: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, l) in src.lines().enumerate() {
        let t = l.trim();
        if t.starts_with('[') {
            current = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        if current == table {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    table_line(src, table)
}

pub struct Loaded {
    pub config: ScenarioConfig,
    pub source: String,
    pub path: Option<PathBuf>,
}

impl Loaded {
    fn err_at(&self, line: Option<usize>, message: impl Into<String>) -> ConfigError {
        ConfigError { file: self.path.clone(), line, column: None, message: message.into() }
    }

    /// Error anchored at `key` in `table`.
    pub fn error(&self, table: &str, key: &str, message: impl Into<String>) -> ConfigError {
        self.err_at(key_line(&self.source, table, key), message)
    }

    /// Error anchored at the header of `table`.
    pub fn table_error(&self, table: &str, message: impl Into<String>) -> ConfigError {
        self.err_at(table_line(&self.source, table), message)
    }
}

pub fn parse_str(src: &str, path: Option<&Path>) -> Result<Loaded, ConfigError> {
    match toml::from_str::<ScenarioConfig>(src) {
        Ok(config) => Ok(Loaded { config, source: src.to_string(), path: path.map(Path::to_path_buf) }),
        Err(e) => {
            let (line, column) = match e.span() {
                Some(s) => {
                    let (l, c) = line_col(src, s.start);
                    (Some(l), Some(c))
                }
                None => (None, None),
            };
            Err(ConfigError {
                file: path.map(Path::to_path_buf),
                line,
                column,
                message: e.message().trim().to_string(),
            })
        }
    }
}

pub fn load(path: &Path) -> Result<Loaded, ConfigError> {
    let src = std::fs::read_to_string(path).map_err(|e| ConfigError {
        file: Some(path.to_path_buf()),
        line: None,
        column: None,
        message: format!("cannot read config: {e}"),
    })?;
    parse_str(&src, Some(path))
}

/// A scenario ready to run.
pub struct Built {
    pub scenario: Scenario,
    pub solver: SolverConfig,
    pub t_final: f64,
    pub seed: u64,
    pub output: OutputSpec,
}

impl Loaded {
    pub fn domain(&self) -> Result<SpatialDomain, ConfigError> {
        let d = match &self.config.domain {
            DomainSpec::Ball { center, radius } => SpatialDomain::ball(v3(center), *radius),
            DomainSpec::Box { lo, hi } => SpatialDomain::cuboid(v3(lo), v3(hi)),
        };
        d.map_err(|e| self.table_error("domain", e.to_string()))
    }

    pub fn velocity(&self) -> Result<VelocityField, ConfigError> {
        let p = match &self.config.velocity {
            VelocitySpec::Constant { value } => VelocityProfile::Constant { value: *value },
            VelocitySpec::Lens { base, depth, center, width } => {
                VelocityProfile::GaussianLens { base: *base, depth: *depth, center: v3(center), width: *width }
            }
            VelocitySpec::Ramp { origin, gradient, low, high } => {
                VelocityProfile::Ramp { origin: v3(origin), gradient: v3(gradient), low: *low, high: *high }
            }
        };
        VelocityField::new(p).map_err(|e| self.table_error("velocity", e.to_string()))
    }

    pub fn flow_config(&self) -> Result<FlowConfig, ConfigError> {
        let f = &self.config.solver.flow;
        let cfg = FlowConfig {
            dt_base: f.dt_base,
            integrator: match f.integrator {
                IntegratorSpec::Rk4 => Integrator::Rk4,
                IntegratorSpec::Heun => Integrator::Heun,
            },
            event_tol: f.event_tol,
            jac_fd_step: f.jac_fd_step,
        };
        cfg.validate().map_err(|e| self.table_error("solver.flow", e.to_string()))?;
        Ok(cfg)
    }

    pub fn momentum(&self) -> Result<MomentumGrid, ConfigError> {
        let g = &self.config.grid;
        let [a, b] = g.k_range;
        let m = if a == b {
            if g.shells != 1 {
                return Err(self.error("grid", "shells", "several shells need k_range with k_lo < k_hi"));
            }
            MomentumGrid::single_shell(a, g.n_polar, g.n_azimuth)
        } else {
            MomentumGrid::gauss_shells(a, b, g.shells, g.n_polar, g.n_azimuth)
        };
        m.map_err(|e| self.table_error("grid", e.to_string()))
    }

    pub fn phase_grid(&self) -> Result<PhaseGrid, ConfigError> {
        let cells = self.config.grid.cells;
        if cells < 2 {
            return Err(self.error("grid", "cells", format!("cells must be at least 2, got {cells}")));
        }
        PhaseGrid::new(self.domain()?, cells, self.momentum()?).map_err(|e| self.table_error("grid", e.to_string()))
    }

    pub fn solver_config(&self, grid: &PhaseGrid, vf: &VelocityField) -> Result<SolverConfig, ConfigError> {
        let s = &self.config.solver;
        let order = InterpolationOrder::from_int(s.interp_order)
            .ok_or_else(|| self.error("solver", "interp_order", format!("interp_order must be 1 or 3, got {}", s.interp_order)))?;
        let dt = match (s.dt, s.cfl) {
            (Some(dt), _) => dt,
            (None, Some(c)) => c * grid.lattice.min_spacing() / vf.nu_max(),
            (None, None) => SolverConfig::default().dt,
        };
        let cfg = SolverConfig {
            dt,
            substeps: s.trotter_substeps,
            order,
            positivity: s.positivity,
            pos_tol: s.pos_tol,
            cfl_limit: s.cfl_limit,
            ledger_exponents: s.ledger_exponents.clone(),
            strict: s.strict,
            flow: self.flow_config()?,
            surface_resolution: s.surface_resolution,
            dissipation_tol: s.dissipation_tol,
        };
        cfg.validate().map_err(|e| self.table_error("solver", e.to_string()))?;
        Ok(cfg)
    }

    pub fn coupling(&self) -> Result<Option<CouplingField>, ConfigError> {
        let Some(n) = &self.config.coupling else { return Ok(None) };
        CouplingField::new(n.spatial.build(), n.directional, v3(&n.axis))
            .map(Some)
            .map_err(|e| self.table_error("coupling", e.to_string()))
    }

    fn field(&self, table: &str, spec: &Option<FieldSpec>) -> Result<Option<Arc<dyn PhaseData>>, ConfigError> {
        match spec {
            None => Ok(None),
            Some(f) => {
                f.check().map_err(|m| self.table_error(table, m))?;
                Ok(Some(Arc::new(f.build())))
            }
        }
    }

    /// Builds the scenario and solver configuration; kernel problems are reported separately.
    pub fn build(&self) -> Result<Built, BuildError> {
        let c = &self.config;
        let cfgerr = BuildError::Config;
        if !(c.t_final >= 0.0 && c.t_final.is_finite()) {
            return Err(cfgerr(self.error("", "t_final", format!("t_final must be nonnegative, got {}", c.t_final))));
        }
        let vf = self.velocity().map_err(cfgerr)?;
        let grid = self.phase_grid().map_err(cfgerr)?;
        let solver = self.solver_config(&grid, &vf).map_err(cfgerr)?;
        let mut sc = Scenario::new(grid, vf);
        if let Some(nf) = self.coupling().map_err(cfgerr)? {
            sc = sc.with_coupling(nf);
        }
        if let Some(s) = &c.scattering {
            if c.absorption.is_some() {
                return Err(cfgerr(self.table_error(
                    "absorption",
                    "a user absorption cannot be combined with scattering; Σ is derived from the kernel",
                )));
            }
            let kernel = s.kernel().map_err(|e| cfgerr(self.table_error("scattering", e.to_string())))?;
            let op = ScatteringOperator::assemble(&kernel, &sc.grid)
                .and_then(|op| op.check_admissible().map(|_| op))
                .map_err(|e| BuildError::Kernel(self.table_error("scattering", e.to_string())))?;
            sc = sc.with_scattering(op);
        }
        if let Some(a) = &c.absorption {
            let prof = a.build();
            let af = AbsorptionField::user(&prof, &sc.grid).map_err(|e| cfgerr(self.table_error("absorption", e.to_string())))?;
            sc = sc.with_absorption(af);
        }
        if let Some(d) = self.field("initial", &c.initial).map_err(cfgerr)? {
            sc = sc.with_initial(d);
        }
        if let Some(d) = self.field("source", &c.source).map_err(cfgerr)? {
            sc = sc.with_source(d);
        }
        if let Some(d) = self.field("boundary", &c.boundary).map_err(cfgerr)? {
            sc = sc.with_boundary(d);
        }
        Ok(Built { scenario: sc, solver, t_final: c.t_final, seed: c.seed, output: c.output.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
t_final = 0.0
[domain]
kind = "box"
lo = [0, 0, 0]
hi = [1, 1, 1]
[velocity]
profile = "constant"
value = 1.0
[grid]
cells = 4
n_polar = 2
n_azimuth = 4
"#;

    #[test]
    fn minimal_config_builds() {
        let l = parse_str(MINIMAL, None).unwrap();
        let b = l.build().unwrap();
        assert_eq!(b.scenario.grid.n_directions(), 8);
        assert_eq!(b.solver.substeps, 1);
    }

    #[test]
    fn unknown_key_is_line_anchored() {
        let src = MINIMAL.replace("n_azimuth = 4", "n_azimuth = 4\nbogus = 1");
        let line = src.lines().position(|l| l.starts_with("bogus")).unwrap() + 1;
        let e = parse_str(&src, None).err().unwrap();
        assert_eq!(e.line, Some(line));
        assert!(e.message.contains("bogus"), "{}", e.message);
    }

    #[test]
    fn semantic_error_points_at_key() {
        let src = MINIMAL.replace("cells = 4", "cells = 1");
        let e = match parse_str(&src, None).unwrap().build() {
            Err(BuildError::Config(e)) => e,
            _ => panic!("expected config error"),
        };
        assert_eq!(e.line, Some(11));
    }
}

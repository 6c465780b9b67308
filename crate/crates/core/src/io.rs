//! Run configuration, CSV outputs and run manifests.
//!
//! Physical inputs are SI; every output is nondimensional. CSV files carry a
//! header row, LF line endings and floats with 17 significant digits.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::chaos::{AnalysisConfig, AttractorRecord, PoincareSet};
use crate::continuation::{Branch, CellOutcome, ChartConfig, ChartGrid, ProbeBox, ProbeReport, SweepConfig, DEFAULT_JUMP_THRESHOLD};
use crate::error::{Error, Result};
use crate::integrator::IntegratorConfig;
use crate::model::{PhysicalParams, State};

pub const POINCARE_HEADER: [&str; 5] = ["k", "r1", "u1", "r2", "u2"];
pub const SWEEP_HEADER: [&str; 14] = [
    "branch", "arm", "eps", "lambda1", "lambda2", "lambda3", "lambda4", "lambda5", "eff_l1", "eff_l2", "class",
    "sync", "period", "event",
];
pub const CHART_HEADER: [&str; 8] = ["ix", "iy", "x_value", "y_value", "eff_l1", "eff_l2", "class", "converged"];

/// Class label for records whose spectrum did not converge.
pub const UNCONVERGED: &str = "Unconverged";
/// Class label for chart cells whose analysis failed.
pub const FAILED: &str = "Failed";

/// Physical block as written by users: every field optional, separation
/// given either as `d` (m) or as `d_ratio`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhysicalInput {
    p_stat: Option<f64>,
    p_v: Option<f64>,
    sigma: Option<f64>,
    rho: Option<f64>,
    eta_l: Option<f64>,
    c: Option<f64>,
    gamma: Option<f64>,
    chi: Option<f64>,
    kappa_s: Option<f64>,
    r10: Option<f64>,
    eps: Option<f64>,
    d: Option<f64>,
    d_ratio: Option<f64>,
    p_ac: Option<f64>,
    omega: Option<f64>,
}

impl PhysicalInput {
    fn resolve(self) -> Result<PhysicalParams> {
        let mut p = PhysicalParams::default();
        let default_ratio = p.d_ratio();
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { p.$f = v; } )* };
        }
        take!(p_stat, p_v, sigma, rho, eta_l, c, gamma, chi, kappa_s, r10, eps, p_ac, omega);
        p.d = match (self.d, self.d_ratio) {
            (Some(_), Some(_)) => {
                return Err(Error::Config {
                    key: "physical.d_ratio".into(),
                    message: "give either `d` or `d_ratio`, not both".into(),
                })
            }
            (Some(d), None) => d,
            (None, Some(r)) => r * p.r10,
            (None, None) => default_ratio * p.r10,
        };
        Ok(p)
    }
}

/// What a run computes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Command {
    Analyze {
        state: State,
    },
    Poincare {
        state: State,
        #[serde(default = "default_skip")]
        skip: usize,
        #[serde(default = "default_collect")]
        collect: usize,
    },
    SweepEps(SweepConfig),
    Chart(ChartConfig),
    Probe {
        n_random: usize,
        #[serde(default, rename = "box")]
        sample_box: ProbeBox,
        #[serde(default = "default_threshold")]
        jump_threshold: f64,
    },
}

fn default_skip() -> usize {
    1000
}

fn default_collect() -> usize {
    1000
}

fn default_threshold() -> f64 {
    DEFAULT_JUMP_THRESHOLD
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analyze { .. } => "analyze",
            Command::Poincare { .. } => "poincare",
            Command::SweepEps(_) => "sweep-eps",
            Command::Chart(_) => "chart",
            Command::Probe { .. } => "probe",
        }
    }

    fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config {
            key: "command".into(),
            message: e.to_string(),
        };
        match self {
            Command::Analyze { .. } => Ok(()),
            Command::Poincare { skip, collect, .. } => {
                if *skip == 0 || *collect == 0 {
                    Err(Error::Config {
                        key: "command.skip".into(),
                        message: "skip and collect must be positive".into(),
                    })
                } else {
                    Ok(())
                }
            }
            Command::SweepEps(sc) => sc.validate().map_err(wrap),
            Command::Chart(cc) => cc.validate().map_err(wrap),
            Command::Probe { n_random, jump_threshold, .. } => {
                if *n_random == 0 {
                    Err(Error::Config {
                        key: "command.n_random".into(),
                        message: "must be at least 1".into(),
                    })
                } else if !(*jump_threshold > 0.0) {
                    Err(Error::Config {
                        key: "command.jump_threshold".into(),
                        message: "must be positive".into(),
                    })
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub physical: PhysicalParams,
    pub integrator: IntegratorConfig,
    pub analysis: AnalysisConfig,
    pub command: Option<Command>,
    pub output_dir: PathBuf,
    pub rng_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            physical: PhysicalParams::default(),
            integrator: IntegratorConfig::default(),
            analysis: AnalysisConfig::default(),
            command: None,
            output_dir: PathBuf::from("out"),
            rng_seed: 0,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigInput {
    #[serde(default)]
    physical: PhysicalInput,
    #[serde(default)]
    integrator: IntegratorConfig,
    #[serde(default)]
    analysis: AnalysisConfig,
    #[serde(default)]
    command: Option<Command>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    rng_seed: Option<u64>,
}

impl RunConfig {
    /// Checks every block; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        self.physical.check().map_err(|(key, message)| Error::Config {
            key: format!("physical.{key}"),
            message,
        })?;
        self.integrator.validate().map_err(|e| Error::Config {
            key: "integrator".into(),
            message: e.to_string(),
        })?;
        let mut analysis = self.analysis;
        analysis.integrator = self.integrator;
        analysis.validate().map_err(|e| Error::Config {
            key: "analysis".into(),
            message: e.to_string(),
        })?;
        if let Some(c) = &self.command {
            c.validate()?;
        }
        Ok(())
    }

    /// Analysis settings with the integrator block folded in.
    pub fn analysis_config(&self) -> AnalysisConfig {
        AnalysisConfig {
            integrator: self.integrator,
            ..self.analysis
        }
    }
}

fn config_error(e: serde_json::Error) -> Error {
    // serde reports unknown or mistyped keys in the message itself
    Error::Config {
        key: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    }
}

/// Parses a configuration (or a run manifest, whose embedded configuration
/// is used) from JSON text.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut value: Value = serde_json::from_str(text).map_err(config_error)?;
    if let Some(obj) = value.as_object_mut() {
        if obj.contains_key("manifest_version") {
            value = obj.remove("config").ok_or_else(|| Error::Config {
                key: "config".into(),
                message: "manifest has no embedded config".into(),
            })?;
        }
    }
    let input: RunConfigInput = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::Config {
            key: if path == "." { "<root>".into() } else { path },
            message: e.into_inner().to_string(),
        }
    })?;
    let defaults = RunConfig::default();
    let mut cfg = RunConfig {
        physical: input.physical.resolve()?,
        integrator: input.integrator,
        analysis: input.analysis,
        command: input.command,
        output_dir: input.output_dir.unwrap_or(defaults.output_dir),
        rng_seed: input.rng_seed.unwrap_or(defaults.rng_seed),
    };
    cfg.analysis.integrator = cfg.integrator;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn config_to_json(cfg: &RunConfig) -> Result<String> {
    serde_json::to_string_pretty(cfg).map_err(|e| Error::Io(e.to_string()))
}

/// Float formatting shared by every CSV: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_writer<W: std::io::Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

pub fn poincare_csv(ps: &PoincareSet) -> Result<Vec<u8>> {
    let mut w = csv_writer(Vec::new());
    w.write_record(POINCARE_HEADER)?;
    for (k, s) in ps.samples.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(s.iter().map(|&v| fmt_f64(v)));
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

fn class_label(r: &AttractorRecord) -> &'static str {
    r.class.map(|c| c.as_str()).unwrap_or(UNCONVERGED)
}

pub fn sweep_csv(branches: &[Branch]) -> Result<Vec<u8>> {
    let mut w = csv_writer(Vec::new());
    let mut header = SWEEP_HEADER;
    if let Some(b) = branches.first() {
        header[2] = b.axis.as_str();
    }
    w.write_record(&header)?;
    for b in branches {
        for p in &b.points {
            let r = &p.record;
            let mut row = vec![b.label.clone(), b.arm.as_str().to_string(), fmt_f64(p.value)];
            row.extend(r.spectrum.exponents.iter().map(|&v| fmt_f64(v)));
            row.push(fmt_f64(r.spectrum.effective.0));
            row.push(fmt_f64(r.spectrum.effective.1));
            row.push(class_label(r).to_string());
            row.push(r.synchrony.as_str().to_string());
            row.push(r.period.map(|p| p.to_string()).unwrap_or_default());
            row.push(p.event.clone().unwrap_or_default());
            w.write_record(&row)?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

pub fn chart_csv(grid: &ChartGrid) -> Result<Vec<u8>> {
    let mut w = csv_writer(Vec::new());
    w.write_record(CHART_HEADER)?;
    for c in &grid.cells {
        let mut row = vec![c.ix.to_string(), c.iy.to_string(), fmt_f64(c.x_value), fmt_f64(c.y_value)];
        match &c.outcome {
            CellOutcome::Resolved {
                effective,
                class,
                converged,
                ..
            } => {
                row.push(fmt_f64(effective.0));
                row.push(fmt_f64(effective.1));
                row.push(class.as_str().to_string());
                row.push(converged.to_string());
            }
            CellOutcome::Failed { .. } => {
                row.extend([String::new(), String::new(), FAILED.to_string(), "false".to_string()]);
            }
        }
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

/// Results of one command, ready to be written.
#[derive(Debug, Clone)]
pub enum RunResults {
    Analyze(AttractorRecord),
    Poincare(PoincareSet),
    Sweep(Vec<Branch>),
    Chart(ChartGrid),
    Probe(ProbeReport),
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn rendered(results: &RunResults) -> Result<Vec<(&'static str, Vec<u8>)>> {
    Ok(match results {
        RunResults::Analyze(r) => vec![("poincare.csv", poincare_csv(&r.poincare)?), ("record.json", to_json(r)?)],
        RunResults::Poincare(ps) => vec![("poincare.csv", poincare_csv(ps)?)],
        RunResults::Sweep(b) => vec![("sweep.csv", sweep_csv(b)?)],
        RunResults::Chart(g) => vec![("chart.csv", chart_csv(g)?)],
        RunResults::Probe(p) => vec![("probe.json", to_json(p)?)],
    })
}

/// Writes `contents` to `path` through a temporary sibling and a rename.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    if let Err(e) = fs::write(&tmp, contents).and_then(|_| fs::rename(&tmp, path)) {
        let _ = fs::remove_file(&tmp);
        return Err(Error::Io(format!("{}: {e}", path.display())));
    }
    Ok(())
}

/// Writes the output files for `results` into `dir`. On failure no partial
/// file is left behind.
pub fn write_outputs(results: &RunResults, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    for (name, bytes) in rendered(results)? {
        let path = dir.join(name);
        if let Err(e) = write_atomic(&path, &bytes) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(e);
        }
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub config: RunConfig,
    pub tool_version: String,
    pub platform: String,
    pub wall_clock_seconds: f64,
    pub jobs: Vec<JobStatus>,
}

impl RunManifest {
    pub fn new(config: RunConfig, wall_clock: Duration, jobs: Vec<JobStatus>) -> Self {
        RunManifest {
            manifest_version: 1,
            config,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            platform: format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH),
            wall_clock_seconds: wall_clock.as_secs_f64(),
            jobs,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join("manifest.json");
        write_atomic(&path, &to_json(self)?)?;
        Ok(path)
    }
}

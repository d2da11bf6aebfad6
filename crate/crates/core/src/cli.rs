//! The `naipw` command-line driver.
//!
//! Configuration is one TOML file with sections `[dgp]`, `[[hyper]]`,
//! `[study]`, `[crossfit]`, `[stress]` and `[probe]`. Any key can be
//! overridden on the command line as `--section.key=value`, where `value` is
//! parsed as a TOML value (falling back to a string). Overrides of `hyper`
//! apply to every grid entry. Flags win over the file.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal.

use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crossfit::{CrossfitSpec, NuisanceSource};
use crate::data::Dataset;
use crate::dgp::DgpSpec;
use crate::error::Error;
use crate::estimators::{estimate, EstimatorKind};
use crate::firststage::{NetHyper, NuisanceEstimates};
use crate::mc::{self, McConfig, ProbeSpec, StressSpec, StudySpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

const SECTIONS: [&str; 6] = ["dgp", "hyper", "study", "crossfit", "stress", "probe"];

#[derive(Debug, Parser)]
#[command(name = "naipw", version, about = "nAIPW and GDR average treatment effect estimation")]
pub struct Cli {
    /// Worker threads for replications and folds.
    #[arg(long, global = true, env = "NAIPW_WORKERS")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a configuration file and print its digest.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Monte Carlo study over the hyperparameter grid.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "naipw-out")]
        out: PathBuf,
    },
    /// Positivity stress test on injected tiny propensities.
    Stress {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "naipw-out")]
        out: PathBuf,
        /// Exponents s of the injected propensity 10^-s; replaces stress.s_grid.
        #[arg(long = "s", num_args = 1..)]
        s: Vec<f64>,
    },
    /// Numeric orthogonality probe at the truth.
    Probe {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "naipw-out")]
        out: PathBuf,
    },
    /// All estimators on a CSV with header `y,a,w1..wp`.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "naipw-out")]
        out: PathBuf,
        /// Use the `g_true,q1_true,q0_true` columns as nuisances.
        #[arg(long)]
        oracle: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StressSection {
    pub n: usize,
    pub s_grid: Vec<f64>,
    pub gap: f64,
}

impl Default for StressSection {
    fn default() -> Self {
        let d = StressSpec::default();
        Self { n: d.dgp.n, s_grid: d.s_grid, gap: d.gap }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub n: usize,
    pub eps_grid: Vec<f64>,
    pub g_scale: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let d = ProbeSpec::default();
        Self { n: d.dgp.n, eps_grid: d.eps_grid, g_scale: d.g_scale }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dgp: DgpSpec,
    pub hyper: Vec<NetHyper>,
    pub study: StudySpec,
    pub crossfit: CrossfitSpec,
    pub stress: StressSection,
    pub probe: ProbeSection,
}

impl RunConfig {
    /// An empty grid becomes the single default network configuration.
    pub fn normalized(mut self) -> Self {
        if self.hyper.is_empty() {
            self.hyper.push(NetHyper::default());
        }
        self
    }

    pub fn mc(&self) -> McConfig {
        McConfig { dgp: self.dgp.clone(), hyper: self.hyper.clone(), study: self.study.clone(), crossfit: self.crossfit.clone() }
    }

    pub fn stress_spec(&self) -> StressSpec {
        let mut dgp = self.dgp.clone();
        dgp.n = self.stress.n;
        StressSpec { dgp, s_grid: self.stress.s_grid.clone(), gap: self.stress.gap }
    }

    pub fn probe_spec(&self) -> ProbeSpec {
        let mut dgp = self.dgp.clone();
        dgp.n = self.probe.n;
        ProbeSpec { dgp, eps_grid: self.probe.eps_grid.clone(), g_scale: self.probe.g_scale }
    }

    pub fn validate(&self) -> crate::Result<()> {
        self.mc().validate()?;
        if self.stress.gap <= 0.0 {
            return Err(Error::InvalidSpec("stress.gap must be positive".into()));
        }
        if self.probe.eps_grid.len() < 2 {
            return Err(Error::InvalidSpec("probe.eps_grid needs at least two values".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A `--section.key=value` flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Override {
    pub section: String,
    pub key: String,
    pub value: String,
}

/// Splits `--section.key=value` flags out of `args`.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<Override>) {
    let mut rest = Vec::new();
    let mut found = Vec::new();
    for a in args {
        let parsed = a.strip_prefix("--").and_then(|body| {
            let (path, value) = body.split_once('=')?;
            let (section, key) = path.split_once('.')?;
            SECTIONS.contains(&section).then(|| Override { section: section.into(), key: key.into(), value: value.into() })
        });
        match parsed {
            Some(o) => found.push(o),
            None => rest.push(a),
        }
    }
    (rest, found)
}

fn toml_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Reads the file (or starts empty), applies overrides, and deserializes.
pub fn load_config(path: Option<&Path>, overrides: &[Override]) -> crate::Result<RunConfig> {
    let mut table: toml::Table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        let v = toml_value(&o.value);
        if o.section == "hyper" {
            let entry = table.entry("hyper").or_insert_with(|| toml::Value::Array(vec![]));
            let arr = entry.as_array_mut().ok_or_else(|| Error::Config("hyper must be an array of tables".into()))?;
            if arr.is_empty() {
                arr.push(toml::Value::Table(toml::Table::new()));
            }
            for h in arr.iter_mut() {
                h.as_table_mut()
                    .ok_or_else(|| Error::Config("hyper entries must be tables".into()))?
                    .insert(o.key.clone(), v.clone());
            }
        } else {
            table
                .entry(o.section.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("{} must be a table", o.section)))?
                .insert(o.key.clone(), v);
        }
    }
    let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let cfg = cfg.normalized();
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Failures {
    pub total: usize,
    pub flagged_cells: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_digest: Option<String>,
    pub seed: Option<u64>,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<String>,
    pub failures: Failures,
    pub exit_code: i32,
    pub error: Option<String>,
}

/// An error with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(e: impl std::fmt::Display) -> Self {
        Self { code: EXIT_CONFIG, message: e.to_string() }
    }

    fn from_run(e: Error) -> Self {
        let code = match &e {
            Error::InvalidSpec(_) | Error::Config(_) => EXIT_CONFIG,
            Error::Data(_)
            | Error::Csv(_)
            | Error::EmptyArm(_)
            | Error::DegenerateArm(_)
            | Error::FoldArm { .. }
            | Error::InvalidWeights(_) => EXIT_DATA,
            _ => EXIT_INTERNAL,
        };
        Self { code, message: e.to_string() }
    }
}

#[derive(Default)]
struct Outcome {
    outputs: Vec<PathBuf>,
    failures: Failures,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Parses `args` (program name first), runs, writes the manifest, and returns
/// the exit code. Messages go to stdout and stderr.
pub fn run_main<I: IntoIterator<Item = String>>(args: I) -> i32 {
    let (args, overrides) = split_overrides(args.into_iter().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let started = now();
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let (name, config_path, out) = match &cli.command {
        Command::Validate { config } => ("validate", config.clone(), None),
        Command::Simulate { config, out } => ("simulate", config.clone(), Some(out.clone())),
        Command::Stress { config, out, .. } => ("stress", config.clone(), Some(out.clone())),
        Command::Probe { config, out } => ("probe", config.clone(), Some(out.clone())),
        Command::Estimate { config, out, .. } => ("estimate", config.clone(), Some(out.clone())),
    };

    let mut cfg = load_config(config_path.as_deref(), &overrides).map_err(CliError::config);
    if let (Ok(c), Command::Stress { s, .. }) = (&mut cfg, &cli.command) {
        if !s.is_empty() {
            c.stress.s_grid = s.clone();
        }
    }
    let result = cfg.as_ref().map_err(|e| CliError { code: e.code, message: e.message.clone() }).and_then(|c| {
        match &cli.command {
            Command::Validate { .. } => {
                println!("config ok, digest {}", c.digest());
                Ok(Outcome::default())
            }
            Command::Simulate { out, .. } => simulate(c, out, workers),
            Command::Stress { out, .. } => stress(c, out),
            Command::Probe { out, .. } => probe(c, out),
            Command::Estimate { data, out, oracle, .. } => estimate_cmd(c, data, out, *oracle, workers),
        }
    });

    let (code, outcome, error) = match result {
        Ok(o) => (EXIT_OK, o, None),
        Err(e) => {
            eprintln!("error: {}", e.message);
            (e.code, Outcome::default(), Some(e.message))
        }
    };
    if let Some(dir) = out {
        let cfg = cfg.as_ref().ok();
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: name.into(),
            config_digest: cfg.map(RunConfig::digest),
            seed: cfg.map(|c| if name == "simulate" { c.study.base_seed } else { c.dgp.seed }),
            started,
            finished: now(),
            outputs: outcome.outputs.iter().map(|p| p.display().to_string()).collect(),
            failures: outcome.failures,
            exit_code: code,
            error,
        };
        if let Err(e) = write_manifest(&dir, &manifest) {
            eprintln!("error: cannot write manifest: {e}");
            return if code == EXIT_OK { EXIT_INTERNAL } else { code };
        }
    }
    code
}

fn write_manifest(dir: &Path, m: &RunManifest) -> crate::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(m)?;
    text.push('\n');
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, std::io::BufWriter<std::fs::File>), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::from_run(e.into()))?;
    let path = dir.join(name);
    let f = std::fs::File::create(&path).map_err(|e| CliError::from_run(e.into()))?;
    Ok((path, std::io::BufWriter::new(f)))
}

fn simulate(c: &RunConfig, out: &Path, workers: usize) -> Result<Outcome, CliError> {
    let config = c.mc();
    let records = mc::run_study(&config, workers).map_err(CliError::from_run)?;
    let summary = mc::summarize_study(&config, &records);
    let outputs = mc::write_outputs(out, &summary, &records).map_err(CliError::from_run)?;
    println!("{:>4} {:>8} {:>8} {:>10} {:>10} {:>10} {:>9}", "cell", "est", "l1", "bias", "mc_std", "rmse", "failures");
    for r in &summary.rows {
        let (b, s, e) = r.metrics.map(|m| (m.bias, m.mc_std, m.rmse)).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
        println!("{:>4} {:>8} {:>8} {:>10.4} {:>10.4} {:>10.4} {:>9}", r.cell_id, r.estimator.name(), r.l1, b, s, e, r.failures);
    }
    Ok(Outcome { outputs, failures: Failures { total: summary.total_failures(), flagged_cells: summary.flagged_cells() } })
}

fn stress(c: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let report = mc::positivity_stress(&c.stress_spec()).map_err(CliError::from_run)?;
    let (path, w) = create(out, "stress.csv")?;
    report.write_csv(w).map_err(CliError::from_run)?;
    println!("{:>5} {:>5} {:>14} {:>12} {:>12} {:>10} {:>7}", "units", "s", "aipw_arm1", "naipw_arm1", "closed_form", "rel_err", "bound");
    for r in &report.rows {
        println!(
            "{:>5} {:>5} {:>14.6e} {:>12.6} {:>12.6} {:>10.2e} {:>7}",
            r.units, r.s, r.aipw_arm1, r.naipw_arm1, r.closed_form_arm1, r.relative_error, r.within_bound
        );
    }
    Ok(Outcome { outputs: vec![path], ..Default::default() })
}

fn probe(c: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let report = c.probe_spec().run().map_err(CliError::from_run)?;
    let (path, w) = create(out, "probe.csv")?;
    report.write_csv(w).map_err(CliError::from_run)?;
    println!("direction norm {:.6}", report.direction_norm);
    println!("slope naipw {:.6}  aipw {:.6}  sr {:.6}", report.naipw_slope, report.aipw_slope, report.sr_slope);
    Ok(Outcome { outputs: vec![path], ..Default::default() })
}

fn estimate_cmd(c: &RunConfig, data_path: &Path, out: &Path, oracle: bool, workers: usize) -> Result<Outcome, CliError> {
    let data = Dataset::load_csv(data_path).map_err(|e| match e {
        Error::Io(io) => CliError { code: EXIT_DATA, message: format!("cannot read {}: {io}", data_path.display()) },
        e => CliError { code: EXIT_DATA, message: e.to_string() },
    })?;
    let nuis: NuisanceEstimates = if oracle {
        NuisanceEstimates::oracle(&data).map_err(CliError::from_run)?
    } else {
        let source = NuisanceSource::Networks { hyper: c.hyper[0].clone(), crossfit: c.crossfit.clone() };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| CliError { code: EXIT_INTERNAL, message: e.to_string() })?;
        pool.install(|| source.estimate(&data, c.study.base_seed)).map_err(CliError::from_run)?
    };
    let (path, w) = create(out, "estimates.csv")?;
    let mut csv_out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    let io = |e: csv::Error| CliError::from_run(e.into());
    csv_out.write_record(["estimator", "beta_hat", "std_error", "error"]).map_err(io)?;
    println!("{:<8} {:>14} {:>14}", "estimator", "beta_hat", "std_error");
    let mut failures = 0;
    for k in EstimatorKind::ALL {
        match estimate(k, &data, &nuis) {
            Ok(r) => {
                let se = r.sigma_hat.map(|s| format!("{s:.6}")).unwrap_or_else(|| "-".into());
                println!("{:<8} {:>14.6} {:>14}", k.name(), r.beta_hat, se);
                let se_raw = r.sigma_hat.map(|s| s.to_string()).unwrap_or_default();
                csv_out.write_record([k.name(), &r.beta_hat.to_string(), &se_raw, ""]).map_err(io)?;
            }
            Err(e) => {
                failures += 1;
                println!("{:<8} {:>14} {:>14}  ({e})", k.name(), "failed", "-");
                csv_out.write_record([k.name(), "", "", &e.to_string()]).map_err(io)?;
            }
        }
    }
    csv_out.flush().map_err(|e| CliError::from_run(e.into()))?;
    Ok(Outcome { outputs: vec![path], failures: Failures { total: failures, flagged_cells: vec![] } })
}

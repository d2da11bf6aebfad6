//! Monte Carlo harness: replications over a hyperparameter grid, summary
//! metrics, and the positivity and orthogonality experiments.
//!
//! Replication `r` uses child seed `base_seed ^ r` for its dataset (links and
//! covariates are redrawn), and every grid cell of that replication trains on
//! the same dataset with the same network and split seeds.

mod probe;
mod stress;

pub use probe::{orthogonality_probe, Perturbation, ProbeReport, ProbeSpec};
pub use stress::{positivity_stress, StressReport, StressRow, StressSpec};

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crossfit::{CrossfitSpec, NuisanceSource};
use crate::dgp::{generate, DgpSpec};
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorKind};
use crate::firststage::NetHyper;
use crate::seed;

const NET_STREAM: u64 = 11;
const SPLIT_STREAM: u64 = 12;

/// Cells whose failure share exceeds this are flagged.
pub const FAILURE_FLAG_SHARE: f64 = 0.10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySpec {
    pub m: usize,
    pub base_seed: u64,
    /// Use the generator's true nuisances instead of training networks.
    pub oracle_mode: bool,
    /// Summary metrics use estimates clipped to `[-cap, cap]`.
    pub cap: f64,
    pub estimators: Vec<EstimatorKind>,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self { m: 100, base_seed: 0, oracle_mode: false, cap: 10.0, estimators: EstimatorKind::ALL.to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub dgp: DgpSpec,
    pub hyper: Vec<NetHyper>,
    pub study: StudySpec,
    pub crossfit: CrossfitSpec,
}

/// One column of the study: how nuisances are obtained, plus labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub id: usize,
    pub source: NuisanceSource,
    pub l1: String,
    pub widths: String,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        self.crossfit.validate()?;
        if self.study.m == 0 {
            return Err(Error::InvalidSpec("study.m must be at least 1".into()));
        }
        if !self.study.oracle_mode && self.hyper.is_empty() {
            return Err(Error::InvalidSpec("the hyperparameter grid is empty".into()));
        }
        if self.study.estimators.is_empty() {
            return Err(Error::InvalidSpec("no estimators selected".into()));
        }
        if !(self.study.cap > 0.0) {
            return Err(Error::InvalidSpec(format!("cap = {} must be positive", self.study.cap)));
        }
        self.hyper.iter().try_for_each(NetHyper::validate)
    }

    /// Oracle mode has one cell; otherwise one per grid entry.
    pub fn cells(&self) -> Vec<Cell> {
        if self.study.oracle_mode {
            return vec![Cell { id: 0, source: NuisanceSource::Oracle, l1: String::new(), widths: "oracle".into() }];
        }
        self.hyper
            .iter()
            .enumerate()
            .map(|(id, h)| Cell {
                id,
                source: NuisanceSource::Networks { hyper: h.clone(), crossfit: self.crossfit.clone() },
                l1: l1_label(h),
                widths: h.widths_label(),
            })
            .collect()
    }
}

fn l1_label(h: &NetHyper) -> String {
    if h.l1_outcome == h.l1_propensity {
        h.l1_outcome.to_string()
    } else {
        format!("{}/{}", h.l1_outcome, h.l1_propensity)
    }
}

/// One replication × cell × estimator outcome.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RawRecord {
    pub cell_id: usize,
    pub rep: usize,
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub beta_hat: Option<f64>,
    pub sigma_hat: Option<f64>,
    pub outcome_r2: Option<f64>,
    pub propensity_auc: Option<f64>,
    pub error: Option<String>,
}

impl RawRecord {
    fn failed(cell_id: usize, rep: usize, seed: u64, estimator: EstimatorKind, e: &Error) -> Self {
        Self {
            cell_id,
            rep,
            seed,
            estimator,
            beta_hat: None,
            sigma_hat: None,
            outcome_r2: None,
            propensity_auc: None,
            error: Some(e.to_string()),
        }
    }
}

pub fn child_seed(base_seed: u64, rep: usize) -> u64 {
    base_seed ^ rep as u64
}

/// All cells and estimators for one replication. Failures become records.
pub fn run_replication(config: &McConfig, rep: usize) -> Vec<RawRecord> {
    let child = child_seed(config.study.base_seed, rep);
    let cells = config.cells();
    let ests = &config.study.estimators;
    let all_failed = |e: &Error| {
        cells
            .iter()
            .flat_map(|c| ests.iter().map(move |&k| RawRecord::failed(c.id, rep, child, k, e)))
            .collect::<Vec<_>>()
    };
    let mut spec = config.dgp.clone();
    spec.seed = child;
    let data = match generate(&spec) {
        Ok(d) => d,
        Err(e) => return all_failed(&e),
    };
    let mut out = Vec::with_capacity(cells.len() * ests.len());
    for cell in &cells {
        let source = match &cell.source {
            NuisanceSource::Networks { hyper, crossfit } => {
                let mut h = hyper.clone();
                h.seed = seed::derive(child ^ hyper.seed, NET_STREAM);
                NuisanceSource::Networks { hyper: h, crossfit: crossfit.clone() }
            }
            s => s.clone(),
        };
        let nuis = match source.estimate(&data, seed::derive(child, SPLIT_STREAM)) {
            Ok(n) => n,
            Err(e) => {
                out.extend(ests.iter().map(|&k| RawRecord::failed(cell.id, rep, child, k, &e)));
                continue;
            }
        };
        let diag = nuis.diagnostics.clone();
        for &k in ests {
            let rec = match estimate(k, &data, &nuis) {
                Ok(r) if r.beta_hat.is_finite() => RawRecord {
                    cell_id: cell.id,
                    rep,
                    seed: child,
                    estimator: k,
                    beta_hat: Some(r.beta_hat),
                    sigma_hat: r.sigma_hat,
                    outcome_r2: diag.as_ref().map(|d| d.outcome_r2),
                    propensity_auc: diag.as_ref().map(|d| d.propensity_auc),
                    error: None,
                },
                Ok(r) => RawRecord::failed(
                    cell.id,
                    rep,
                    child,
                    k,
                    &Error::InvalidWeights(format!("non-finite estimate {}", r.beta_hat)),
                ),
                Err(e) => RawRecord::failed(cell.id, rep, child, k, &e),
            };
            out.push(rec);
        }
    }
    out
}

/// Runs `m` replications on `workers` threads. Records are ordered by
/// replication index regardless of scheduling.
pub fn run_study(config: &McConfig, workers: usize) -> Result<Vec<RawRecord>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let per_rep: Vec<Vec<RawRecord>> =
        pool.install(|| (0..config.study.m).into_par_iter().map(|r| run_replication(config, r)).collect());
    Ok(per_rep.into_iter().flatten().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    /// `β - mean(β̂)`
    pub bias: f64,
    /// Standard deviation of the estimates, `1/m` normalization.
    pub mc_std: f64,
    /// `sqrt(mc_std² + bias²)`
    pub rmse: f64,
    /// Mean reported standard error, when any were reported.
    pub mean_se: Option<f64>,
    pub replications: usize,
}

/// Bias, spread and RMSE of `estimates` around `beta_true`.
pub fn summarize(estimates: &[f64], std_errors: &[f64], beta_true: f64) -> Metrics {
    let m = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / m;
    let bias = beta_true - mean;
    let mc_std = (estimates.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / m).sqrt();
    let mean_se = (!std_errors.is_empty()).then(|| std_errors.iter().sum::<f64>() / std_errors.len() as f64);
    Metrics { bias, mc_std, rmse: (mc_std * mc_std + bias * bias).sqrt(), mean_se, replications: estimates.len() }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub cell_id: usize,
    pub estimator: EstimatorKind,
    pub scheme: &'static str,
    pub n: usize,
    pub p: usize,
    pub l1: String,
    pub widths: String,
    /// `None` when every replication failed.
    pub metrics: Option<Metrics>,
    pub failures: usize,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McSummary {
    pub rows: Vec<SummaryRow>,
    pub beta_true: f64,
    pub cap: f64,
}

impl McSummary {
    pub fn get(&self, cell_id: usize, estimator: EstimatorKind) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.cell_id == cell_id && r.estimator == estimator)
    }

    pub fn total_failures(&self) -> usize {
        self.rows.iter().map(|r| r.failures).sum()
    }

    pub fn flagged_cells(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.rows.iter().filter(|r| r.flagged).map(|r| r.cell_id).collect();
        ids.dedup();
        ids
    }

    /// `cell_id,estimator,scheme,n,p,l1,widths,bias,mc_std,rmse,mean_se,failures`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record([
            "cell_id", "estimator", "scheme", "n", "p", "l1", "widths", "bias", "mc_std", "rmse", "mean_se", "failures",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let m = r.metrics.as_ref();
            w.write_record([
                r.cell_id.to_string(),
                r.estimator.name().into(),
                r.scheme.into(),
                r.n.to_string(),
                r.p.to_string(),
                r.l1.clone(),
                r.widths.clone(),
                opt(m.map(|m| m.bias)),
                opt(m.map(|m| m.mc_std)),
                opt(m.map(|m| m.rmse)),
                opt(m.and_then(|m| m.mean_se)),
                r.failures.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per cell × estimator metrics over successful replications, with estimates
/// clipped to `[-cap, cap]`. Row order follows the cells, then `estimators`.
pub fn summarize_study(config: &McConfig, records: &[RawRecord]) -> McSummary {
    let cap = config.study.cap;
    let beta = config.dgp.beta_true;
    let mut rows = Vec::new();
    for cell in config.cells() {
        for &k in &config.study.estimators {
            let recs: Vec<&RawRecord> = records.iter().filter(|r| r.cell_id == cell.id && r.estimator == k).collect();
            let est: Vec<f64> = recs.iter().filter_map(|r| r.beta_hat).map(|b| b.clamp(-cap, cap)).collect();
            let ses: Vec<f64> =
                recs.iter().filter(|r| r.beta_hat.is_some()).filter_map(|r| r.sigma_hat).collect();
            let failures = recs.len() - est.len();
            rows.push(SummaryRow {
                cell_id: cell.id,
                estimator: k,
                scheme: k.scheme().map(|s| s.name()).unwrap_or(""),
                n: config.dgp.n,
                p: config.dgp.p,
                l1: cell.l1.clone(),
                widths: cell.widths.clone(),
                metrics: (!est.is_empty()).then(|| summarize(&est, &ses, beta)),
                failures,
                flagged: failures as f64 > FAILURE_FLAG_SHARE * recs.len() as f64,
            });
        }
    }
    McSummary { rows, beta_true: beta, cap }
}

/// Share of successful replications whose `β̂ ± z·σ̂` covers `beta_true`.
pub fn coverage(records: &[RawRecord], cell_id: usize, estimator: EstimatorKind, beta_true: f64, z: f64) -> Option<f64> {
    let hits: Vec<bool> = records
        .iter()
        .filter(|r| r.cell_id == cell_id && r.estimator == estimator)
        .filter_map(|r| Some((r.beta_hat?, r.sigma_hat?)))
        .map(|(b, s)| (b - beta_true).abs() <= z * s)
        .collect();
    (!hits.is_empty()).then(|| hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// One row per replication × cell × estimator, raw (unclipped) values.
pub fn write_raw_csv<W: Write>(records: &[RawRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record([
        "cell_id", "rep", "seed", "estimator", "beta_hat", "sigma_hat", "outcome_r2", "propensity_auc", "error",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.cell_id.to_string(),
            r.rep.to_string(),
            r.seed.to_string(),
            r.estimator.name().into(),
            opt(r.beta_hat),
            opt(r.sigma_hat),
            opt(r.outcome_r2),
            opt(r.propensity_auc),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `summary.csv` and `raw.csv` into `dir`; returns their paths.
pub fn write_outputs(dir: &Path, summary: &McSummary, records: &[RawRecord]) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let s = dir.join("summary.csv");
    let r = dir.join("raw.csv");
    summary.write_csv(std::io::BufWriter::new(std::fs::File::create(&s)?))?;
    write_raw_csv(records, std::io::BufWriter::new(std::fs::File::create(&r)?))?;
    Ok(vec![s, r])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn two_point_metrics() {
        let m = summarize(&[1.1, 0.9], &[], 1.0);
        assert_abs_diff_eq!(m.bias, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.mc_std, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(m.rmse, 0.1, epsilon = 1e-15);
        assert_eq!(m.mean_se, None);
    }

    #[test]
    fn exact_estimates_have_zero_metrics() {
        let m = summarize(&[1.0; 5], &[0.0; 5], 1.0);
        assert_eq!((m.bias, m.mc_std, m.rmse, m.mean_se), (0.0, 0.0, 0.0, Some(0.0)));
    }

    #[test]
    fn bias_sign_is_truth_minus_mean() {
        assert_eq!(summarize(&[1.5], &[], 1.0).bias, -0.5);
    }

    fn oracle_config(m: usize) -> McConfig {
        let mut c = McConfig::default();
        c.dgp.n = 300;
        c.study.m = m;
        c.study.oracle_mode = true;
        c.study.base_seed = 5;
        c
    }

    #[test]
    fn oracle_sr_is_exact() {
        let c = oracle_config(1);
        for rep in [0, 3] {
            let recs = run_replication(&c, rep);
            let sr = recs.iter().find(|r| r.estimator == EstimatorKind::Sr).unwrap();
            assert_eq!(sr.beta_hat, Some(1.0));
            assert_eq!(sr.seed, 5 ^ rep as u64);
        }
    }

    #[test]
    fn replication_is_deterministic() {
        let c = oracle_config(1);
        assert_eq!(run_replication(&c, 2), run_replication(&c, 2));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let c = oracle_config(6);
        assert_eq!(run_study(&c, 1).unwrap(), run_study(&c, 3).unwrap());
    }

    #[test]
    fn failures_are_counted_and_flagged() {
        let mut c = oracle_config(3);
        c.study.estimators = vec![EstimatorKind::Sr];
        let mut recs = run_study(&c, 1).unwrap();
        recs[1] = RawRecord::failed(0, 1, 0, EstimatorKind::Sr, &Error::DegenerateArm(10));
        let s = summarize_study(&c, &recs);
        assert_eq!(s.rows[0].failures, 1);
        assert!(s.rows[0].flagged);
        assert_eq!(s.rows[0].metrics.unwrap().replications, 2);
    }

    #[test]
    fn capping_clips_summary_only() {
        let mut c = oracle_config(2);
        c.study.estimators = vec![EstimatorKind::Aipw];
        c.study.cap = 2.0;
        let mut recs = run_study(&c, 1).unwrap();
        recs[0].beta_hat = Some(1e6);
        let s = summarize_study(&c, &recs);
        let m = s.rows[0].metrics.unwrap();
        let other = recs[1].beta_hat.unwrap().clamp(-2.0, 2.0);
        assert_abs_diff_eq!(m.bias, 1.0 - (2.0 + other) / 2.0, epsilon = 1e-12);
        let mut buf = Vec::new();
        write_raw_csv(&recs, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains(",1000000,"));
    }

    #[test]
    fn empty_grid_rejected() {
        let mut c = McConfig::default();
        c.hyper.clear();
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn rmse_identity(est in proptest::collection::vec(-5.0f64..5.0, 1..50), beta in -2.0f64..2.0) {
            let m = summarize(&est, &[], beta);
            prop_assert!((m.rmse.powi(2) - m.bias.powi(2) - m.mc_std.powi(2)).abs() <= 1e-12 * (1.0 + m.rmse.powi(2)));
        }

        #[test]
        fn order_invariant(mut est in proptest::collection::vec(-5.0f64..5.0, 1..50), seed: u64) {
            use rand::seq::SliceRandom;
            let a = summarize(&est, &[], 1.0);
            est.shuffle(&mut crate::seed::rng(seed));
            let b = summarize(&est, &[], 1.0);
            prop_assert!((a.rmse - b.rmse).abs() <= 1e-12 && (a.bias - b.bias).abs() <= 1e-12);
        }
    }
}

//! First-stage nuisance models: two separate networks, one for the outcome
//! regression `Q(a, w)` and one for the propensity score `g(w)`.
//!
//! The outcome network reads `(A, W)` and its linear skip carries the
//! treatment coefficient; `Q(1, w)` and `Q(0, w)` are obtained by setting the
//! treatment input to 1 and 0. Both networks minimize the batch-mean data loss
//! plus `C · Σ|w|` over connection weights with Adam. The L1 term enters as a
//! subgradient, so weights hover near zero rather than snapping to it.

mod adam;
pub mod mlp;

pub use adam::Adam;
pub use mlp::{gradient_check, GradCheck, Head, LossKind, Mlp};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{arms_present, Dataset};
use crate::error::{Error, Result};
use crate::seed;

/// A hidden-layer width, either fixed or relative to the input size `p`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerWidth {
    Fixed(usize),
    /// `"p"` (input size) or `"q"` (`max(1, round(p / 10))`).
    Symbol(String),
}

impl LayerWidth {
    pub fn resolve(&self, p: usize) -> Result<usize> {
        match self {
            LayerWidth::Fixed(0) => Err(Error::InvalidSpec("hidden width must be at least 1".into())),
            LayerWidth::Fixed(w) => Ok(*w),
            LayerWidth::Symbol(s) => match s.as_str() {
                "p" => Ok(p.max(1)),
                "q" => Ok(((p as f64 / 10.0).round() as usize).max(1)),
                other => Err(Error::InvalidSpec(format!("unknown layer width symbol {other:?}; use \"p\", \"q\" or a number"))),
            },
        }
    }

    pub fn label(&self) -> String {
        match self {
            LayerWidth::Fixed(w) => w.to_string(),
            LayerWidth::Symbol(s) => s.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetHyper {
    pub hidden_widths: Vec<LayerWidth>,
    pub l1_outcome: f64,
    pub l1_propensity: f64,
    pub learning_rate: f64,
    pub momentum_beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    /// Mini-batch size; `None` means `3·p`.
    pub batch_size: Option<usize>,
    /// Propensity predictions are clamped to `[clamp_eps, 1 - clamp_eps]`.
    pub clamp_eps: f64,
    pub seed: u64,
}

impl Default for NetHyper {
    /// Widths `[p, p, p]`, learning rate 0.01, β₁ 0.95, 200 epochs, batch `3p`, no penalty.
    fn default() -> Self {
        Self {
            hidden_widths: vec![LayerWidth::Symbol("p".into()); 3],
            l1_outcome: 0.0,
            l1_propensity: 0.0,
            learning_rate: 0.01,
            momentum_beta1: 0.95,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 200,
            batch_size: None,
            clamp_eps: 1e-6,
            seed: 0,
        }
    }
}

impl NetHyper {
    pub fn with_l1(mut self, l1: f64) -> Self {
        self.l1_outcome = l1;
        self.l1_propensity = l1;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate = {} must be positive", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum_beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.l1_outcome >= 0.0 && self.l1_propensity >= 0.0) {
            return bad("L1 penalties must be non-negative".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.clamp_eps >= 0.0 && self.clamp_eps < 0.5) {
            return bad(format!("clamp_eps = {} must lie in [0, 0.5)", self.clamp_eps));
        }
        for w in &self.hidden_widths {
            w.resolve(1)?;
        }
        Ok(())
    }

    pub fn widths(&self, p: usize) -> Result<Vec<usize>> {
        self.hidden_widths.iter().map(|w| w.resolve(p)).collect()
    }

    pub fn widths_label(&self) -> String {
        if self.hidden_widths.is_empty() {
            return "linear".into();
        }
        self.hidden_widths.iter().map(LayerWidth::label).collect::<Vec<_>>().join("-")
    }

    pub fn batch(&self, p: usize) -> usize {
        self.batch_size.unwrap_or(3 * p).max(1)
    }
}

/// Per-observation nuisance predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuisanceEstimates {
    pub q1_hat: Vec<f64>,
    pub q0_hat: Vec<f64>,
    pub g_hat: Vec<f64>,
    pub fold_id: Option<Vec<usize>>,
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// R² of the factual outcome predictions.
    pub outcome_r2: f64,
    /// Area under the ROC curve of `g_hat` against `A`.
    pub propensity_auc: f64,
}

impl NuisanceEstimates {
    /// Validates lengths, finiteness and `0 < g < 1`. No clamping happens here.
    pub fn new(q1_hat: Vec<f64>, q0_hat: Vec<f64>, g_hat: Vec<f64>) -> Result<Self> {
        let n = g_hat.len();
        if q1_hat.len() != n || q0_hat.len() != n {
            return Err(Error::Data("nuisance vectors must share one length".into()));
        }
        if q1_hat.iter().chain(&q0_hat).any(|v| !v.is_finite()) {
            return Err(Error::Data("outcome predictions must be finite".into()));
        }
        if let Some(i) = g_hat.iter().position(|&g| !(g > 0.0 && g < 1.0)) {
            return Err(Error::Data(format!("propensity {} at row {i} is outside (0, 1)", g_hat[i])));
        }
        Ok(Self { q1_hat, q0_hat, g_hat, fold_id: None, diagnostics: None })
    }

    /// The true nuisances of a synthetic dataset, substituted verbatim.
    pub fn oracle(data: &Dataset) -> Result<Self> {
        let t = data.truth.as_ref().ok_or_else(|| Error::Data("oracle nuisances need a dataset with truth".into()))?;
        Self::new(t.q1.clone(), t.q0.clone(), t.g.clone())
    }

    pub fn len(&self) -> usize {
        self.g_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g_hat.is_empty()
    }

    pub fn check_matches(&self, data: &Dataset) -> Result<()> {
        if self.len() != data.n() {
            return Err(Error::Data(format!("{} nuisance rows for {} observations", self.len(), data.n())));
        }
        Ok(())
    }

    pub fn with_diagnostics(mut self, data: &Dataset) -> Self {
        let fitted: Vec<f64> =
            (0..data.n()).map(|i| if data.a[i] == 1 { self.q1_hat[i] } else { self.q0_hat[i] }).collect();
        self.diagnostics =
            Some(Diagnostics { outcome_r2: r_squared(&data.y, &fitted), propensity_auc: auc(&self.g_hat, &data.a) });
        self
    }
}

/// `[A, W]` for the given rows.
fn outcome_design(data: &Dataset, rows: &[usize], treat: Option<f64>) -> Array2<f64> {
    let p = data.p();
    let mut x = Array2::zeros((rows.len(), p + 1));
    for (r, &i) in rows.iter().enumerate() {
        x[(r, 0)] = treat.unwrap_or_else(|| data.treat(i));
        x.row_mut(r).slice_mut(ndarray::s![1..]).assign(&data.w.row(i));
    }
    x
}

fn check_rows(data: &Dataset, rows: &[usize]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Data("training subset is empty".into()));
    }
    if let Some(&i) = rows.iter().find(|&&i| i >= data.n()) {
        return Err(Error::Data(format!("row index {i} out of range")));
    }
    arms_present(rows.iter().map(|&i| data.a[i]))
}

const OUTCOME_STREAM: u64 = 1;
const PROPENSITY_STREAM: u64 = 2;

/// Fits `E[Y | A, W]` on `rows`.
pub fn train_outcome(data: &Dataset, hyper: &NetHyper, rows: &[usize]) -> Result<Mlp> {
    hyper.validate()?;
    check_rows(data, rows)?;
    let x = outcome_design(data, rows, None);
    let y: Vec<f64> = rows.iter().map(|&i| data.y[i]).collect();
    fit(x, &y, Head::Linear, hyper, hyper.l1_outcome, data.p(), OUTCOME_STREAM, "outcome")
}

/// Fits `P(A = 1 | W)` on `rows`.
pub fn train_propensity(data: &Dataset, hyper: &NetHyper, rows: &[usize]) -> Result<Mlp> {
    hyper.validate()?;
    check_rows(data, rows)?;
    let x = data.w.select(Axis(0), rows);
    let a: Vec<f64> = rows.iter().map(|&i| data.treat(i)).collect();
    fit(x, &a, Head::Logistic, hyper, hyper.l1_propensity, data.p(), PROPENSITY_STREAM, "propensity")
}

#[allow(clippy::too_many_arguments)]
fn fit(
    x: Array2<f64>,
    target: &[f64],
    head: Head,
    hyper: &NetHyper,
    l1: f64,
    p: usize,
    stream: u64,
    name: &'static str,
) -> Result<Mlp> {
    let mut rng = seed::rng(seed::derive(hyper.seed, stream));
    let widths = hyper.widths(p)?;
    let mut net = Mlp::init(x.ncols(), &widths, head, &mut rng);
    let mut opt = Adam::new(net.n_params(), hyper.learning_rate, hyper.momentum_beta1, hyper.beta2, hyper.adam_eps);
    let batch = hyper.batch(p);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let full_batch = batch >= order.len();
    let mut tb = Vec::with_capacity(batch);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let (loss, grad) = if full_batch {
                net.loss_and_grad(x.view(), target, l1)
            } else {
                let xb = x.select(Axis(0), chunk);
                tb.clear();
                tb.extend(chunk.iter().map(|&i| target[i]));
                net.loss_and_grad(xb.view(), &tb, l1)
            };
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { net: name, epoch, learning_rate: hyper.learning_rate });
            }
            opt.step(&mut net.params, &grad);
        }
    }
    if net.params.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged { net: name, epoch: hyper.epochs, learning_rate: hyper.learning_rate });
    }
    Ok(net)
}

/// Predictions for `rows`, in order. `g_hat` is clamped to `[clamp_eps, 1 - clamp_eps]`.
pub fn predict_nuisances(
    outcome: &Mlp,
    propensity: &Mlp,
    data: &Dataset,
    rows: &[usize],
    clamp_eps: f64,
) -> Result<NuisanceEstimates> {
    let q1_hat = outcome.predict(outcome_design(data, rows, Some(1.0)).view());
    let q0_hat = outcome.predict(outcome_design(data, rows, Some(0.0)).view());
    // A floor of one ulp keeps the open-interval contract when clamp_eps = 0.
    let lo = clamp_eps.max(f64::MIN_POSITIVE);
    let hi = (1.0 - clamp_eps).min(1.0 - f64::EPSILON / 2.0);
    let g_hat = propensity.predict(data.w.select(Axis(0), rows).view()).into_iter().map(|g| g.clamp(lo, hi)).collect();
    NuisanceEstimates::new(q1_hat, q0_hat, g_hat)
}

/// Trains both networks on `rows` and predicts every row of `data`.
pub fn fit_full_sample(data: &Dataset, hyper: &NetHyper) -> Result<NuisanceEstimates> {
    let rows: Vec<usize> = (0..data.n()).collect();
    let outcome = train_outcome(data, hyper, &rows)?;
    let propensity = train_propensity(data, hyper, &rows)?;
    Ok(predict_nuisances(&outcome, &propensity, data, &rows, hyper.clamp_eps)?.with_diagnostics(data))
}

pub fn r_squared(y: &[f64], fitted: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fitted).map(|(v, f)| (v - f).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - ss_res / ss_tot
}

/// Mann–Whitney AUC with mid-ranks for ties. `NaN` when an arm is empty.
pub fn auc(score: &[f64], label: &[u8]) -> f64 {
    let mut idx: Vec<usize> = (0..score.len()).collect();
    idx.sort_by(|&a, &b| score[a].total_cmp(&score[b]));
    let mut ranks = vec![0.0; score.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && score[idx[j + 1]] == score[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    let n1 = label.iter().filter(|&&a| a == 1).count() as f64;
    let n0 = label.len() as f64 - n1;
    if n1 == 0.0 || n0 == 0.0 {
        return f64::NAN;
    }
    let rank_sum: f64 = ranks.iter().zip(label).filter(|(_, &a)| a == 1).map(|(r, _)| r).sum();
    (rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0)
}

//! Second-step ATE estimators.
//!
//! Every estimator takes the nuisances as given and never re-clamps them;
//! extreme propensities are the caller's experimental variable.
//!
//! The general doubly robust (GDR) family is
//!
//! ```text
//! β̂ = (1/n) Σ [ A(y - Q̂¹)/h¹ - (1-A)(y - Q̂⁰)/h⁰ ] + β̂_SR
//! ```
//!
//! with `h¹ = ĝ, h⁰ = 1 - ĝ` for AIPW and `h¹ = ĝ·Ê[A/ĝ], h⁰ = (1-ĝ)·Ê[(1-A)/(1-ĝ)]`
//! for nAIPW, which turns each arm's adjustment into a convex combination of
//! residuals.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::firststage::NuisanceEstimates;
use crate::variance;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Aipw,
    Naipw,
    /// nAIPW weights only where `ĝ < ε` (treated side) or `ĝ > 1 - ε`
    /// (control side), AIPW weights elsewhere. `ε = 1/n`. Experimental.
    Hybrid,
}

impl WeightScheme {
    pub fn name(self) -> &'static str {
        match self {
            WeightScheme::Aipw => "aipw",
            WeightScheme::Naipw => "naipw",
            WeightScheme::Hybrid => "hybrid",
        }
    }

    /// Per-observation `(h¹, h⁰)`.
    pub fn weights(self, data: &Dataset, nuis: &NuisanceEstimates) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = data.n();
        let g = &nuis.g_hat;
        let (mean_v, mean_u) = normalizers(data, g);
        let h1: Vec<f64>;
        let h0: Vec<f64>;
        match self {
            WeightScheme::Aipw => {
                h1 = g.clone();
                h0 = g.iter().map(|g| 1.0 - g).collect();
            }
            WeightScheme::Naipw => {
                h1 = g.iter().map(|g| g * mean_v).collect();
                h0 = g.iter().map(|g| (1.0 - g) * mean_u).collect();
            }
            WeightScheme::Hybrid => {
                let eps = 1.0 / n as f64;
                h1 = g.iter().map(|&g| if g < eps { g * mean_v } else { g }).collect();
                h0 = g.iter().map(|&g| if g > 1.0 - eps { (1.0 - g) * mean_u } else { 1.0 - g }).collect();
            }
        }
        if let Some(i) = h1.iter().chain(&h0).position(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::InvalidWeights(format!("{} weight {} is not strictly positive", self.name(), i % n)));
        }
        Ok((h1, h0))
    }
}

/// `(Ê[A/ĝ], Ê[(1-A)/(1-ĝ)])`.
fn normalizers(data: &Dataset, g: &[f64]) -> (f64, f64) {
    let n = data.n() as f64;
    let (mut v, mut u) = (0.0, 0.0);
    for (i, &gi) in g.iter().enumerate() {
        if data.a[i] == 1 {
            v += 1.0 / gi;
        } else {
            u += 1.0 / (1.0 - gi);
        }
    }
    (v / n, u / n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Nate,
    Sr,
    Ipw,
    Nipw,
    Aipw,
    Naipw,
    Hybrid,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::Nate,
        EstimatorKind::Sr,
        EstimatorKind::Ipw,
        EstimatorKind::Nipw,
        EstimatorKind::Aipw,
        EstimatorKind::Naipw,
        EstimatorKind::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Nate => "nate",
            EstimatorKind::Sr => "sr",
            EstimatorKind::Ipw => "ipw",
            EstimatorKind::Nipw => "nipw",
            EstimatorKind::Aipw => "aipw",
            EstimatorKind::Naipw => "naipw",
            EstimatorKind::Hybrid => "hybrid",
        }
    }

    pub fn scheme(self) -> Option<WeightScheme> {
        match self {
            EstimatorKind::Aipw => Some(WeightScheme::Aipw),
            EstimatorKind::Naipw => Some(WeightScheme::Naipw),
            EstimatorKind::Hybrid => Some(WeightScheme::Hybrid),
            _ => None,
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub estimator: EstimatorKind,
    pub beta_hat: f64,
    /// Influence-function standard error; only AIPW and nAIPW carry one.
    pub sigma_hat: Option<f64>,
    pub n_used: usize,
    pub scheme: Option<WeightScheme>,
    pub experimental: bool,
}

impl EstimatorResult {
    fn point(estimator: EstimatorKind, beta_hat: f64, n: usize) -> Self {
        Self { estimator, beta_hat, sigma_hat: None, n_used: n, scheme: estimator.scheme(), experimental: false }
    }

    /// Scheme label for flat records; empty for non-GDR estimators.
    pub fn scheme_label(&self) -> &'static str {
        self.scheme.map(WeightScheme::name).unwrap_or("")
    }
}

fn check_inputs(data: &Dataset, nuis: &NuisanceEstimates) -> Result<()> {
    nuis.check_matches(data)?;
    data.require_both_arms()
}

/// Difference of arm-wise means of the fitted outcomes.
pub fn nate(data: &Dataset, nuis: &NuisanceEstimates) -> Result<EstimatorResult> {
    check_inputs(data, nuis)?;
    let (n1, n0) = data.arm_counts();
    let (mut s1, mut s0) = (0.0, 0.0);
    for i in 0..data.n() {
        if data.a[i] == 1 {
            s1 += nuis.q1_hat[i];
        } else {
            s0 += nuis.q0_hat[i];
        }
    }
    Ok(EstimatorResult::point(EstimatorKind::Nate, s1 / n1 as f64 - s0 / n0 as f64, data.n()))
}

fn sr_value(nuis: &NuisanceEstimates) -> f64 {
    let n = nuis.len() as f64;
    nuis.q1_hat.iter().zip(&nuis.q0_hat).map(|(a, b)| a - b).sum::<f64>() / n
}

/// Single robust plug-in `mean(Q̂¹ - Q̂⁰)`.
pub fn sr(data: &Dataset, nuis: &NuisanceEstimates) -> Result<EstimatorResult> {
    nuis.check_matches(data)?;
    Ok(EstimatorResult::point(EstimatorKind::Sr, sr_value(nuis), data.n()))
}

pub fn ipw(data: &Dataset, nuis: &NuisanceEstimates) -> Result<EstimatorResult> {
    check_inputs(data, nuis)?;
    let n = data.n() as f64;
    let total: f64 = (0..data.n())
        .map(|i| {
            let g = nuis.g_hat[i];
            if data.a[i] == 1 {
                data.y[i] / g
            } else {
                -data.y[i] / (1.0 - g)
            }
        })
        .sum();
    Ok(EstimatorResult::point(EstimatorKind::Ipw, total / n, data.n()))
}

/// Self-normalized IPW with `w¹ = 1/ĝ`, `w⁰ = 1/(1-ĝ)`.
pub fn nipw(data: &Dataset, nuis: &NuisanceEstimates) -> Result<EstimatorResult> {
    check_inputs(data, nuis)?;
    let w1: Vec<f64> = nuis.g_hat.iter().map(|g| 1.0 / g).collect();
    let w0: Vec<f64> = nuis.g_hat.iter().map(|g| 1.0 / (1.0 - g)).collect();
    let beta = nipw_weighted(data, &w1, &w0)?;
    Ok(EstimatorResult::point(EstimatorKind::Nipw, beta, data.n()))
}

/// nIPW with arbitrary positive arm weights.
pub fn nipw_weighted(data: &Dataset, w1: &[f64], w0: &[f64]) -> Result<f64> {
    let m1 = normalized_mean(data, 1, w1, &data.y)?;
    let m0 = normalized_mean(data, 0, w0, &data.y)?;
    Ok(m1 - m0)
}

/// `Σ_{A=arm} w·x / Σ_{A=arm} w`.
fn normalized_mean(data: &Dataset, arm: u8, w: &[f64], x: &[f64]) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..data.n() {
        if data.a[i] == arm {
            num += w[i] * x[i];
            den += w[i];
        }
    }
    if !(den > 0.0 && den.is_finite()) {
        let name = if arm == 1 { "treated" } else { "control" };
        return Err(Error::InvalidWeights(format!("{name} arm has total weight {den}")));
    }
    Ok(num / den)
}

/// Arm-wise adjustment terms `(adj¹, adj⁰)` so that `β̂ = adj¹ - adj⁰ + β̂_SR`.
pub fn adjustments(data: &Dataset, nuis: &NuisanceEstimates, scheme: WeightScheme) -> Result<(f64, f64)> {
    check_inputs(data, nuis)?;
    let n = data.n();
    let f: Vec<f64> = (0..n).map(|i| data.y[i] - nuis.q1_hat[i]).collect();
    let h: Vec<f64> = (0..n).map(|i| data.y[i] - nuis.q0_hat[i]).collect();
    if scheme == WeightScheme::Naipw {
        // Normalized weights evaluated directly; algebraically equal to the h form.
        let w1: Vec<f64> = nuis.g_hat.iter().map(|g| 1.0 / g).collect();
        let w0: Vec<f64> = nuis.g_hat.iter().map(|g| 1.0 / (1.0 - g)).collect();
        return Ok((normalized_mean(data, 1, &w1, &f)?, normalized_mean(data, 0, &w0, &h)?));
    }
    let (h1, h0) = scheme.weights(data, nuis)?;
    let (mut a1, mut a0) = (0.0, 0.0);
    for i in 0..n {
        if data.a[i] == 1 {
            a1 += f[i] / h1[i];
        } else {
            a0 += h[i] / h0[i];
        }
    }
    Ok((a1 / n as f64, a0 / n as f64))
}

/// GDR point estimate for `scheme`; AIPW and nAIPW also get a standard error.
pub fn gdr(data: &Dataset, nuis: &NuisanceEstimates, scheme: WeightScheme) -> Result<EstimatorResult> {
    let (a1, a0) = adjustments(data, nuis, scheme)?;
    let beta_hat = a1 - a0 + sr_value(nuis);
    let sigma_hat = match scheme {
        WeightScheme::Aipw => Some(variance::var_aipw(data, nuis, beta_hat)?.sqrt()),
        WeightScheme::Naipw => Some(variance::var_naipw(data, nuis, beta_hat)?.sqrt()),
        WeightScheme::Hybrid => None,
    };
    let estimator = match scheme {
        WeightScheme::Aipw => EstimatorKind::Aipw,
        WeightScheme::Naipw => EstimatorKind::Naipw,
        WeightScheme::Hybrid => EstimatorKind::Hybrid,
    };
    Ok(EstimatorResult {
        estimator,
        beta_hat,
        sigma_hat,
        n_used: data.n(),
        scheme: Some(scheme),
        experimental: scheme == WeightScheme::Hybrid,
    })
}

pub fn estimate(kind: EstimatorKind, data: &Dataset, nuis: &NuisanceEstimates) -> Result<EstimatorResult> {
    match kind {
        EstimatorKind::Nate => nate(data, nuis),
        EstimatorKind::Sr => sr(data, nuis),
        EstimatorKind::Ipw => ipw(data, nuis),
        EstimatorKind::Nipw => nipw(data, nuis),
        EstimatorKind::Aipw => gdr(data, nuis, WeightScheme::Aipw),
        EstimatorKind::Naipw => gdr(data, nuis, WeightScheme::Naipw),
        EstimatorKind::Hybrid => gdr(data, nuis, WeightScheme::Hybrid),
    }
}

/// Empirical moments behind the GDR unbiasedness condition.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnbiasednessReport {
    pub scheme: WeightScheme,
    /// `Ê[A - h¹]`
    pub mean_a_minus_h1: f64,
    /// `Ê[1 - A - h⁰]`
    pub mean_1ma_minus_h0: f64,
    /// `Ê[A / h¹]`, exactly 1 for nAIPW.
    pub mean_a_over_h1: f64,
    /// `Ê[(1 - A) / h⁰]`, exactly 1 for nAIPW.
    pub mean_1ma_over_h0: f64,
}

pub fn unbiasedness_check(scheme: WeightScheme, data: &Dataset, nuis: &NuisanceEstimates) -> Result<UnbiasednessReport> {
    nuis.check_matches(data)?;
    let (h1, h0) = scheme.weights(data, nuis)?;
    let n = data.n() as f64;
    let mean = |f: &dyn Fn(usize) -> f64| (0..data.n()).map(f).sum::<f64>() / n;
    Ok(UnbiasednessReport {
        scheme,
        mean_a_minus_h1: mean(&|i| data.treat(i) - h1[i]),
        mean_1ma_minus_h0: mean(&|i| 1.0 - data.treat(i) - h0[i]),
        mean_a_over_h1: mean(&|i| data.treat(i) / h1[i]),
        mean_1ma_over_h0: mean(&|i| (1.0 - data.treat(i)) / h0[i]),
    })
}

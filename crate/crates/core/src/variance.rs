//! Influence-function variances for AIPW and nAIPW, the M-estimation sandwich
//! used to cross-check the nAIPW formula, and the product-of-errors remainder
//! bound.
//!
//! nAIPW is the first coordinate of the root `θ̂ = (β̂, γ̂, λ̂)` of the stacked
//! estimating equations `Σ ψ_i = 0` with
//!
//! ```text
//! φ = λ·v·f - γ·u·h + (γλ/n)(q - β)
//! η = v - γ/n
//! Ω = u - λ/n
//! ```
//!
//! where `v = A/ĝ`, `u = (1-A)/(1-ĝ)`, `f = y - Q̂¹`, `h = y - Q̂⁰` and
//! `q = Q̂¹ - Q̂⁰`. The roots are `γ̂ = Σv`, `λ̂ = Σu`.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::Serialize;

use crate::data::{Dataset, Truth};
use crate::error::{Error, Result};
use crate::estimators::WeightScheme;
use crate::firststage::NuisanceEstimates;

/// Per-observation stacked scores at `(β, γ, λ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreComponents {
    pub phi: Vec<f64>,
    pub eta: Vec<f64>,
    pub omega: Vec<f64>,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub f: Vec<f64>,
    pub h: Vec<f64>,
    pub q: Vec<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl ScoreComponents {
    /// Scores at an arbitrary parameter value.
    pub fn at(data: &Dataset, nuis: &NuisanceEstimates, beta: f64, gamma: f64, lambda: f64) -> Result<Self> {
        nuis.check_matches(data)?;
        let n = data.n();
        let nf = n as f64;
        let mut s = Self {
            phi: Vec::with_capacity(n),
            eta: Vec::with_capacity(n),
            omega: Vec::with_capacity(n),
            v: Vec::with_capacity(n),
            u: Vec::with_capacity(n),
            f: Vec::with_capacity(n),
            h: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            beta,
            gamma,
            lambda,
        };
        for i in 0..n {
            let a = data.treat(i);
            let g = nuis.g_hat[i];
            let v = a / g;
            let u = (1.0 - a) / (1.0 - g);
            let f = data.y[i] - nuis.q1_hat[i];
            let h = data.y[i] - nuis.q0_hat[i];
            let q = nuis.q1_hat[i] - nuis.q0_hat[i];
            s.phi.push(lambda * v * f - gamma * u * h + gamma * lambda / nf * (q - beta));
            s.eta.push(v - gamma / nf);
            s.omega.push(u - lambda / nf);
            s.v.push(v);
            s.u.push(u);
            s.f.push(f);
            s.h.push(h);
            s.q.push(q);
        }
        Ok(s)
    }

    /// Scores at the root `(β̂_nAIPW, Σv, Σu)`.
    pub fn fitted(data: &Dataset, nuis: &NuisanceEstimates) -> Result<Self> {
        data.require_both_arms()?;
        nuis.check_matches(data)?;
        let (mut gamma, mut lambda) = (0.0, 0.0);
        let (mut vf, mut uh, mut qs) = (0.0, 0.0, 0.0);
        for i in 0..data.n() {
            let g = nuis.g_hat[i];
            if data.a[i] == 1 {
                gamma += 1.0 / g;
                vf += (data.y[i] - nuis.q1_hat[i]) / g;
            } else {
                lambda += 1.0 / (1.0 - g);
                uh += (data.y[i] - nuis.q0_hat[i]) / (1.0 - g);
            }
            qs += nuis.q1_hat[i] - nuis.q0_hat[i];
        }
        let beta = vf / gamma - uh / lambda + qs / data.n() as f64;
        Self::at(data, nuis, beta, gamma, lambda)
    }

    pub fn n(&self) -> usize {
        self.phi.len()
    }

    /// `(Σφ, Ση, ΣΩ)`.
    pub fn sums(&self) -> [f64; 3] {
        [self.phi.iter().sum(), self.eta.iter().sum(), self.omega.iter().sum()]
    }
}

/// How the plug-in term enters the squared influence function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
pub enum Centering {
    /// `q_i - β̂` per observation; matches the estimating-equation derivation.
    #[default]
    PerObservation,
    /// `β̂_SR - β̂` for every observation, as some printed forms write it.
    PooledSr,
}

fn plug_in_terms(nuis: &NuisanceEstimates, beta: f64, centering: Centering) -> Vec<f64> {
    let q: Vec<f64> = nuis.q1_hat.iter().zip(&nuis.q0_hat).map(|(a, b)| a - b).collect();
    match centering {
        Centering::PerObservation => q.iter().map(|qi| qi - beta).collect(),
        Centering::PooledSr => {
            let sr = q.iter().sum::<f64>() / q.len() as f64;
            vec![sr - beta; q.len()]
        }
    }
}

/// `(1/n²) Σ (A(y-Q̂¹)/ĝ - (1-A)(y-Q̂⁰)/(1-ĝ) + q_i - β̂)²`.
pub fn var_aipw(data: &Dataset, nuis: &NuisanceEstimates, beta_aipw: f64) -> Result<f64> {
    var_aipw_with(data, nuis, beta_aipw, Centering::PerObservation)
}

pub fn var_aipw_with(data: &Dataset, nuis: &NuisanceEstimates, beta_aipw: f64, centering: Centering) -> Result<f64> {
    nuis.check_matches(data)?;
    if let Some(i) = nuis.g_hat.iter().position(|&g| g <= 0.0 || g >= 1.0) {
        return Err(Error::InvalidWeights(format!("propensity at row {i} lies on the boundary")));
    }
    let plug = plug_in_terms(nuis, beta_aipw, centering);
    let n = data.n() as f64;
    let ss: f64 = (0..data.n())
        .map(|i| {
            let g = nuis.g_hat[i];
            let adj = if data.a[i] == 1 {
                (data.y[i] - nuis.q1_hat[i]) / g
            } else {
                -(data.y[i] - nuis.q0_hat[i]) / (1.0 - g)
            };
            (adj + plug[i]).powi(2)
        })
        .sum();
    Ok(ss / (n * n))
}

/// `Σ (v_i f_i/γ̂ - u_i h_i/λ̂ + (q_i - β̂)/n)²` with `γ̂ = Σv`, `λ̂ = Σu`.
pub fn var_naipw(data: &Dataset, nuis: &NuisanceEstimates, beta_naipw: f64) -> Result<f64> {
    var_naipw_with(data, nuis, beta_naipw, Centering::PerObservation)
}

pub fn var_naipw_with(data: &Dataset, nuis: &NuisanceEstimates, beta_naipw: f64, centering: Centering) -> Result<f64> {
    nuis.check_matches(data)?;
    data.require_both_arms()?;
    let plug = plug_in_terms(nuis, beta_naipw, centering);
    let (mut gamma, mut lambda) = (0.0, 0.0);
    for i in 0..data.n() {
        if data.a[i] == 1 {
            gamma += 1.0 / nuis.g_hat[i];
        } else {
            lambda += 1.0 / (1.0 - nuis.g_hat[i]);
        }
    }
    let n = data.n() as f64;
    Ok((0..data.n())
        .map(|i| {
            let g = nuis.g_hat[i];
            let adj = if data.a[i] == 1 {
                (data.y[i] - nuis.q1_hat[i]) / g / gamma
            } else {
                -(data.y[i] - nuis.q0_hat[i]) / (1.0 - g) / lambda
            };
            (adj + plug[i] / n).powi(2)
        })
        .sum())
}

/// Sandwich assembled from sample averages at the fitted root.
#[derive(Clone, Debug, PartialEq)]
pub struct Sandwich {
    /// `(β̂, γ̂, λ̂)`
    pub theta: [f64; 3],
    /// `Î = -Ê ∂ψ/∂θᵀ`
    pub information: Matrix3<f64>,
    /// `B̂ = Ê ψψᵀ`
    pub meat: Matrix3<f64>,
    /// `[(1/n) Î⁻¹ B̂ Î⁻ᵀ]₁₁`, cross terms included.
    pub full: f64,
    /// Same entry keeping only the `Ê φ²` term.
    pub truncated: f64,
}

impl Sandwich {
    /// The cross-term contribution `full - truncated`.
    pub fn cross_terms(&self) -> f64 {
        self.full - self.truncated
    }

    /// Smallest eigenvalue of `B̂`.
    pub fn meat_min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.meat).eigenvalues.min()
    }
}

/// Variance of `β̂_nAIPW` from the stacked M-estimator.
pub fn sandwich_oracle(data: &Dataset, nuis: &NuisanceEstimates) -> Result<Sandwich> {
    let s = ScoreComponents::fitted(data, nuis)?;
    let n = s.n() as f64;
    let (beta, gamma, lambda) = (s.beta, s.gamma, s.lambda);
    if !(gamma * lambda > 0.0 && (gamma * lambda).is_finite()) {
        return Err(Error::Singular(format!("γ̂·λ̂ = {}", gamma * lambda)));
    }
    let mean = |f: &dyn Fn(usize) -> f64| (0..s.n()).map(f).sum::<f64>() / n;

    // ∂φ/∂β = -γλ/n, ∂φ/∂γ = -uh + (λ/n)(q-β), ∂φ/∂λ = vf + (γ/n)(q-β),
    // ∂η/∂γ = ∂Ω/∂λ = -1/n.
    let i12 = mean(&|i| s.u[i] * s.h[i] - lambda / n * (s.q[i] - beta));
    let i13 = -mean(&|i| s.v[i] * s.f[i] + gamma / n * (s.q[i] - beta));
    #[rustfmt::skip]
    let information = Matrix3::new(
        gamma * lambda / n, i12,       i13,
        0.0,                1.0 / n,   0.0,
        0.0,                0.0,       1.0 / n,
    );

    let mut meat = Matrix3::zeros();
    for i in 0..s.n() {
        let psi = Vector3::new(s.phi[i], s.eta[i], s.omega[i]);
        meat += psi * psi.transpose();
    }
    meat /= n;

    let inv = information
        .try_inverse()
        .ok_or_else(|| Error::Singular("information matrix has no inverse".into()))?;
    let cov = inv * meat * inv.transpose() / n;
    let truncated = inv[(0, 0)].powi(2) * meat[(0, 0)] / n;
    Ok(Sandwich { theta: [beta, gamma, lambda], information, meat, full: cov[(0, 0)], truncated })
}

/// Hölder bound on the remainder, one factor pair per arm:
/// `‖g/ĥ¹ - 1‖₂·‖Q¹ - Q̂¹‖₂` and `‖(1-g)/ĥ⁰ - 1‖₂·‖Q⁰ - Q̂⁰‖₂`.
pub fn remainder_diagnostic(
    data: &Dataset,
    nuis: &NuisanceEstimates,
    truth: &Truth,
    scheme: WeightScheme,
) -> Result<(f64, f64)> {
    nuis.check_matches(data)?;
    let (h1, h0) = scheme.weights(data, nuis)?;
    let n = data.n() as f64;
    let rms = |f: &dyn Fn(usize) -> f64| ((0..data.n()).map(|i| f(i).powi(2)).sum::<f64>() / n).sqrt();
    let arm1 = rms(&|i| truth.g[i] / h1[i] - 1.0) * rms(&|i| truth.q1[i] - nuis.q1_hat[i]);
    let arm0 = rms(&|i| (1.0 - truth.g[i]) / h0[i] - 1.0) * rms(&|i| truth.q0[i] - nuis.q0_hat[i]);
    Ok((arm1, arm0))
}

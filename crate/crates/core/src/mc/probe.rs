use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dgp::{generate, DgpSpec};
use crate::error::{Error, Result};
use crate::firststage::NuisanceEstimates;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSpec {
    pub dgp: DgpSpec,
    /// Step sizes; a symmetric grid cancels curvature in the slope fit.
    pub eps_grid: Vec<f64>,
    /// Scale of the propensity direction.
    pub g_scale: f64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        let mut dgp = DgpSpec::small_design();
        dgp.n = 50_000;
        Self { dgp, eps_grid: vec![-0.05, -0.04, -0.03, -0.02, -0.01, 0.0, 0.01, 0.02, 0.03, 0.04, 0.05], g_scale: 0.2 }
    }
}

/// Nuisance direction `(dQ¹, dQ⁰, dg)`; the probe evaluates moments at
/// `η + ε·direction`.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub dq1: Vec<f64>,
    pub dq0: Vec<f64>,
    pub dg: Vec<f64>,
}

impl Perturbation {
    /// `dQ¹ = 1 + w₁/2`, `dQ⁰ = -w₁/2`, `dg = g_scale·g(1-g)·tanh(w₂)`.
    /// The propensity term vanishes at the boundaries so `g + ε·dg` stays in
    /// `(0, 1)` for `|ε| < 1/g_scale`.
    pub fn standard(data: &Dataset, truth_g: &[f64], g_scale: f64) -> Self {
        let w1 = data.w.column(0);
        let w2 = data.w.column(1.min(data.p() - 1));
        Self {
            dq1: w1.iter().map(|x| 1.0 + 0.5 * x).collect(),
            dq0: w1.iter().map(|x| -0.5 * x).collect(),
            dg: truth_g.iter().zip(w2.iter()).map(|(g, x)| g_scale * g * (1.0 - g) * x.tanh()).collect(),
        }
    }

    /// Only the outcome components.
    pub fn outcome_only(&self) -> Self {
        Self { dq1: self.dq1.clone(), dq0: self.dq0.clone(), dg: vec![0.0; self.dg.len()] }
    }

    /// Root mean square over all three components.
    pub fn norm(&self) -> f64 {
        let n = self.dg.len() as f64;
        let ss = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / n;
        (ss(&self.dq1) + ss(&self.dq0) + ss(&self.dg)).sqrt()
    }

    fn apply(&self, base: &NuisanceEstimates, eps: f64) -> Result<NuisanceEstimates> {
        let shift = |b: &[f64], d: &[f64]| b.iter().zip(d).map(|(b, d)| b + eps * d).collect::<Vec<_>>();
        NuisanceEstimates::new(shift(&base.q1_hat, &self.dq1), shift(&base.q0_hat, &self.dq0), shift(&base.g_hat, &self.dg))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeReport {
    pub n: usize,
    pub eps: Vec<f64>,
    /// Moments at each `ε`, evaluated at `β = β_true`.
    pub naipw: Vec<f64>,
    pub aipw: Vec<f64>,
    pub sr: Vec<f64>,
    /// Least-squares slopes through the moments above.
    pub naipw_slope: f64,
    pub aipw_slope: f64,
    pub sr_slope: f64,
    pub direction_norm: f64,
}

impl ProbeReport {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["eps", "naipw", "aipw", "sr"])?;
        for i in 0..self.eps.len() {
            w.write_record([self.eps[i], self.naipw[i], self.aipw[i], self.sr[i]].map(|v| v.to_string()))?;
        }
        w.write_record(["slope".to_string(), self.naipw_slope.to_string(), self.aipw_slope.to_string(), self.sr_slope.to_string()])?;
        w.flush()?;
        Ok(())
    }
}

fn moments(data: &Dataset, nuis: &NuisanceEstimates, beta: f64) -> (f64, f64, f64) {
    let n = data.n() as f64;
    let (mut aipw, mut q) = (0.0, 0.0);
    let (mut vf, mut v, mut uh, mut u) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..data.n() {
        let g = nuis.g_hat[i];
        let qi = nuis.q1_hat[i] - nuis.q0_hat[i];
        q += qi;
        if data.a[i] == 1 {
            let f = data.y[i] - nuis.q1_hat[i];
            aipw += f / g;
            vf += f / g;
            v += 1.0 / g;
        } else {
            let h = data.y[i] - nuis.q0_hat[i];
            aipw -= h / (1.0 - g);
            uh += h / (1.0 - g);
            u += 1.0 / (1.0 - g);
        }
    }
    let sr = q / n - beta;
    (vf / v - uh / u + sr, aipw / n + sr, sr)
}

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let m = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / m, y.iter().sum::<f64>() / m);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Numeric Gateaux derivative of each moment at the truth of `data` along
/// `direction`.
pub fn orthogonality_probe(data: &Dataset, direction: &Perturbation, eps_grid: &[f64]) -> Result<ProbeReport> {
    let truth = data.truth.as_ref().ok_or_else(|| Error::Data("the probe needs a dataset with truth".into()))?;
    data.require_both_arms()?;
    if eps_grid.len() < 2 {
        return Err(Error::InvalidSpec("the probe needs at least two step sizes".into()));
    }
    let base = NuisanceEstimates::oracle(data)?;
    let (mut naipw, mut aipw, mut sr) = (Vec::new(), Vec::new(), Vec::new());
    for &e in eps_grid {
        let (a, b, c) = moments(data, &direction.apply(&base, e)?, truth.beta);
        naipw.push(a);
        aipw.push(b);
        sr.push(c);
    }
    Ok(ProbeReport {
        n: data.n(),
        naipw_slope: ls_slope(eps_grid, &naipw),
        aipw_slope: ls_slope(eps_grid, &aipw),
        sr_slope: ls_slope(eps_grid, &sr),
        eps: eps_grid.to_vec(),
        naipw,
        aipw,
        sr,
        direction_norm: direction.norm(),
    })
}

impl ProbeSpec {
    /// Generates the dataset and runs the probe along the standard direction.
    pub fn run(&self) -> Result<ProbeReport> {
        let data = generate(&self.dgp)?;
        let g = data.truth.as_ref().map(|t| t.g.clone()).unwrap_or_default();
        let dir = Perturbation::standard(&data, &g, self.g_scale);
        orthogonality_probe(&data, &dir, &self.eps_grid)
    }
}

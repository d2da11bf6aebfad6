use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dgp::{generate, DgpSpec};
use crate::error::{Error, Result};
use crate::estimators::{adjustments, gdr, WeightScheme};
use crate::firststage::NuisanceEstimates;
use crate::variance::{var_aipw, var_naipw};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StressSpec {
    pub dgp: DgpSpec,
    /// Exponents `s` of the injected propensity `10^-s`. `s = 0` leaves the
    /// base nuisances untouched.
    pub s_grid: Vec<f64>,
    /// The second unit gets `10^-(s + gap)`.
    pub gap: f64,
}

impl Default for StressSpec {
    fn default() -> Self {
        let mut dgp = DgpSpec::small_design();
        dgp.n = 1000;
        Self { dgp, s_grid: vec![0.0, 2.0, 4.0, 8.0, 12.0], gap: 2.0 }
    }
}

/// Treated-arm quantities for one injection.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StressRow {
    /// 1 or 2 injected units.
    pub units: usize,
    pub s: f64,
    pub t: Option<f64>,
    /// Treated-arm adjustment `Σ A f / h¹ / n` under AIPW weights.
    pub aipw_adj1: f64,
    pub naipw_adj1: f64,
    /// Arm-1 estimates: adjustment plus `mean(Q̂¹)`.
    pub aipw_arm1: f64,
    pub naipw_arm1: f64,
    /// Exact single-unit form `(10^s f_k + Σ_{-k} f_i/ĝ_i) / (10^s + Σ_{-k} A/ĝ)`
    /// plus `mean(Q̂¹)`, or the two-unit approximation when `units = 2`.
    pub closed_form_arm1: f64,
    /// `f_k + mean(Q̂¹)`, the large-`s` limit.
    pub limit_arm1: f64,
    pub relative_error: f64,
    /// Treated residual range; nAIPW's adjustment must lie inside it.
    pub residual_min: f64,
    pub residual_max: f64,
    pub within_bound: bool,
    pub aipw_beta: f64,
    pub naipw_beta: f64,
    pub aipw_var: f64,
    pub naipw_var: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StressReport {
    pub n: usize,
    /// Treated units receiving the injections.
    pub k: usize,
    pub l: usize,
    pub rows: Vec<StressRow>,
}

impl StressReport {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record([
            "units", "s", "t", "aipw_adj1", "naipw_adj1", "aipw_arm1", "naipw_arm1", "closed_form_arm1",
            "limit_arm1", "relative_error", "residual_min", "residual_max", "within_bound", "aipw_beta",
            "naipw_beta", "aipw_var", "naipw_var",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.units.to_string(),
                r.s.to_string(),
                r.t.map(|t| t.to_string()).unwrap_or_default(),
                r.aipw_adj1.to_string(),
                r.naipw_adj1.to_string(),
                r.aipw_arm1.to_string(),
                r.naipw_arm1.to_string(),
                r.closed_form_arm1.to_string(),
                r.limit_arm1.to_string(),
                r.relative_error.to_string(),
                r.residual_min.to_string(),
                r.residual_max.to_string(),
                r.within_bound.to_string(),
                r.aipw_beta.to_string(),
                r.naipw_beta.to_string(),
                r.aipw_var.to_string(),
                r.naipw_var.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Injects tiny propensities into the true nuisances of one generated
/// dataset: first at the treated unit `k` with the largest `|y - Q¹|`, then
/// also at the runner-up `l` with exponent `t = s + gap`.
pub fn positivity_stress(spec: &StressSpec) -> Result<StressReport> {
    let data = generate(&spec.dgp)?;
    let base = NuisanceEstimates::oracle(&data)?;
    let f: Vec<f64> = (0..data.n()).map(|i| data.y[i] - base.q1_hat[i]).collect();
    let mut treated: Vec<usize> = (0..data.n()).filter(|&i| data.a[i] == 1).collect();
    if treated.len() < 2 {
        return Err(Error::EmptyArm("treated"));
    }
    treated.sort_by(|&i, &j| f[j].abs().total_cmp(&f[i].abs()).then(i.cmp(&j)));
    let (k, l) = (treated[0], treated[1]);

    let mut rows = Vec::new();
    for &s in &spec.s_grid {
        rows.push(row(&data, &base, &f, &[(k, s)])?);
    }
    for &s in &spec.s_grid {
        if s > 0.0 {
            rows.push(row(&data, &base, &f, &[(k, s), (l, s + spec.gap)])?);
        }
    }
    Ok(StressReport { n: data.n(), k, l, rows })
}

fn row(data: &Dataset, base: &NuisanceEstimates, f: &[f64], inject: &[(usize, f64)]) -> Result<StressRow> {
    let mut nuis = base.clone();
    for &(i, s) in inject {
        if s > 0.0 {
            nuis.g_hat[i] = 10f64.powf(-s);
        }
    }
    let n = data.n();
    let nf = n as f64;
    let mean_q1 = nuis.q1_hat.iter().sum::<f64>() / nf;
    let (aipw_adj1, _) = adjustments(data, &nuis, WeightScheme::Aipw)?;
    let (naipw_adj1, _) = adjustments(data, &nuis, WeightScheme::Naipw)?;
    let aipw = gdr(data, &nuis, WeightScheme::Aipw)?;
    let naipw = gdr(data, &nuis, WeightScheme::Naipw)?;

    let (k, s) = inject[0];
    let closed = match inject {
        [_] => {
            // Exact rearrangement with the injected weight pulled out.
            let (mut num, mut den) = (0.0, 0.0);
            for i in (0..n).filter(|&i| data.a[i] == 1 && i != k) {
                num += f[i] / nuis.g_hat[i];
                den += 1.0 / nuis.g_hat[i];
            }
            let big = 1.0 / nuis.g_hat[k];
            (big * f[k] + num) / (big + den)
        }
        [_, (l, t)] => {
            let m = nf - 2.0;
            f[k] / (1.0 + 10f64.powf(t - s) + 10f64.powf(-s) * m) + f[*l] / (1.0 + 10f64.powf(s - t) + 10f64.powf(-t) * m)
        }
        _ => unreachable!("one or two injections"),
    } + mean_q1;

    let treated_f = (0..n).filter(|&i| data.a[i] == 1).map(|i| f[i]);
    let residual_min = treated_f.clone().fold(f64::INFINITY, f64::min);
    let residual_max = treated_f.fold(f64::NEG_INFINITY, f64::max);
    let naipw_arm1 = naipw_adj1 + mean_q1;
    Ok(StressRow {
        units: inject.len(),
        s,
        t: inject.get(1).map(|&(_, t)| t),
        aipw_adj1,
        naipw_adj1,
        aipw_arm1: aipw_adj1 + mean_q1,
        naipw_arm1,
        closed_form_arm1: closed,
        limit_arm1: f[k] + mean_q1,
        relative_error: (naipw_arm1 - closed).abs() / closed.abs(),
        residual_min,
        residual_max,
        within_bound: residual_min <= naipw_adj1 && naipw_adj1 <= residual_max,
        aipw_beta: aipw.beta_hat,
        naipw_beta: naipw.beta_hat,
        aipw_var: var_aipw(data, &nuis, aipw.beta_hat)?,
        naipw_var: var_naipw(data, &nuis, naipw.beta_hat)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> StressReport {
        positivity_stress(&StressSpec::default()).unwrap()
    }

    #[test]
    fn single_unit_rows() {
        let r = report();
        for row in r.rows.iter().filter(|r| r.units == 1) {
            assert!(row.within_bound, "s = {}", row.s);
            assert!(row.relative_error < 1e-10, "s = {}: {}", row.s, row.relative_error);
        }
        let s8 = r.rows.iter().find(|r| r.units == 1 && r.s == 8.0).unwrap();
        assert!(s8.aipw_adj1.abs() >= 1e4 * s8.naipw_adj1.abs());
        assert!((s8.naipw_arm1 - s8.limit_arm1).abs() < 0.01 * s8.limit_arm1.abs());
        let s0 = r.rows.iter().find(|r| r.units == 1 && r.s == 0.0).unwrap();
        assert!((s0.aipw_beta - s0.naipw_beta).abs() < 0.1);
    }

    #[test]
    fn two_unit_rows_finite_and_close() {
        let r = report();
        for row in r.rows.iter().filter(|r| r.units == 2 && r.s >= 8.0) {
            assert!(row.naipw_arm1.is_finite() && row.within_bound);
            assert!(row.relative_error < 0.01, "s = {}: {}", row.s, row.relative_error);
        }
    }
}

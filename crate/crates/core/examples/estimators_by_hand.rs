//! Every estimator on two tiny datasets whose answers can be checked by hand.
//!
//! D4: `y = (2, 0, 1, -1)`, `A = (1, 1, 0, 0)`, `Q̂¹ = 1`, `Q̂⁰ = 0`, `ĝ = 0.5`.
//! All residual corrections cancel and every estimator returns 1.
//!
//! Dx: `y = (1, 0, 0)`, `A = (1, 0, 0)`, `Q̂ = 0`, `ĝ = (1e-6, 0.5, 0.5)`.
//! The lone treated unit has a tiny propensity; AIPW multiplies its residual
//! by 10⁶/3 while nAIPW's normalized weight caps it at the residual itself.

use naipw::data::Dataset;
use naipw::estimators::{adjustments, estimate, unbiasedness_check, EstimatorKind, WeightScheme};
use naipw::firststage::NuisanceEstimates;
use ndarray::Array2;

fn show(title: &str, data: &Dataset, nuis: &NuisanceEstimates) -> naipw::Result<()> {
    println!("{title}");
    println!("  {:<8} {:>14} {:>14}", "estimator", "beta_hat", "se");
    for k in EstimatorKind::ALL {
        let r = estimate(k, data, nuis)?;
        let se = r.sigma_hat.map_or("-".to_string(), |s| format!("{s:.6}"));
        println!("  {:<8} {:>14.6} {:>14}", k.name(), r.beta_hat, se);
    }
    for s in [WeightScheme::Aipw, WeightScheme::Naipw] {
        let (a1, a0) = adjustments(data, nuis, s)?;
        let u = unbiasedness_check(s, data, nuis)?;
        println!(
            "  {:<6} adjustments ({a1:.6}, {a0:.6}), E[A/h¹] = {:.6}, E[(1-A)/h⁰] = {:.6}",
            s.name(),
            u.mean_a_over_h1,
            u.mean_1ma_over_h0
        );
    }
    Ok(())
}

fn main() -> naipw::Result<()> {
    let d4 = Dataset::new(Array2::zeros((4, 1)), vec![1, 1, 0, 0], vec![2.0, 0.0, 1.0, -1.0])?;
    let n4 = NuisanceEstimates::new(vec![1.0; 4], vec![0.0; 4], vec![0.5; 4])?;
    show("D4", &d4, &n4)?;

    let dx = Dataset::new(Array2::zeros((3, 1)), vec![1, 0, 0], vec![1.0, 0.0, 0.0])?;
    let nx = NuisanceEstimates::new(vec![0.0; 3], vec![0.0; 3], vec![1e-6, 0.5, 0.5])?;
    println!();
    show("Dx", &dx, &nx)
}

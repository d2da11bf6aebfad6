//! Fits the outcome and propensity networks on one synthetic dataset and
//! compares them with the true nuisances.
//!
//!     cargo run --example train_nuisances -- [l1] [epochs]

use std::time::Instant;

use naipw::dgp::{generate, DgpSpec};
use naipw::estimators::{estimate, EstimatorKind};
use naipw::firststage::{fit_full_sample, NetHyper};

fn rms(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

fn main() -> naipw::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let l1: f64 = args.first().map_or(0.0, |s| s.parse().expect("l1 must be a number"));
    let epochs: usize = args.get(1).map_or(200, |s| s.parse().expect("epochs must be an integer"));

    let data = generate(&DgpSpec::small_design())?;
    let hyper = NetHyper { epochs, ..NetHyper::default().with_l1(l1) };
    let start = Instant::now();
    let nuis = fit_full_sample(&data, &hyper)?;
    println!("n = {}, p = {}, widths {}, L1 {l1}, {epochs} epochs", data.n(), data.p(), hyper.widths_label());
    println!("training took {:.2?}", start.elapsed());

    let truth = data.truth.as_ref().expect("synthetic data carries truth");
    let d = nuis.diagnostics.as_ref().expect("diagnostics are attached");
    println!("outcome R² {:.3}, propensity AUC {:.3}", d.outcome_r2, d.propensity_auc);
    println!("rms(Q̂¹ - Q¹) {:.3}", rms(&nuis.q1_hat, &truth.q1));
    println!("rms(Q̂⁰ - Q⁰) {:.3}", rms(&nuis.q0_hat, &truth.q0));
    println!("rms(ĝ - g)   {:.3}", rms(&nuis.g_hat, &truth.g));
    let (lo, hi) = nuis.g_hat.iter().fold((1.0f64, 0.0f64), |(l, h), &g| (l.min(g), h.max(g)));
    println!("ĝ range [{lo:.2e}, {hi:.6}]");

    println!("\n{:<8} {:>10} {:>10}", "estimator", "beta_hat", "se");
    for k in EstimatorKind::ALL {
        let r = estimate(k, &data, &nuis)?;
        let se = r.sigma_hat.map_or("-".to_string(), |s| format!("{s:.4}"));
        println!("{:<8} {:>10.4} {:>10}", k.name(), r.beta_hat, se);
    }
    Ok(())
}

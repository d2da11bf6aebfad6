//! Splits a dataset into stratified folds, cross-fits both networks, and
//! compares the out-of-fold estimates with a full-sample fit.
//!
//!     cargo run --example crossfit -- [k]

use naipw::crossfit::{crossfit_nuisances, split_folds};
use naipw::dgp::{generate, DgpSpec};
use naipw::estimators::{gdr, WeightScheme};
use naipw::firststage::{fit_full_sample, NetHyper};

fn main() -> naipw::Result<()> {
    let k: usize = std::env::args().nth(1).map_or(5, |s| s.parse().expect("k must be an integer"));
    let data = generate(&DgpSpec::small_design())?;
    let hyper = NetHyper::default();

    let plan = split_folds(data.n(), k, 42, Some(&data.a))?;
    for f in 0..k {
        let rows = plan.rows_in(f);
        let treated = rows.iter().filter(|&&i| data.a[i] == 1).count();
        println!("fold {f}: {} rows, {treated} treated", rows.len());
    }

    let out_of_fold = crossfit_nuisances(&data, &hyper, &plan)?;
    let in_sample = fit_full_sample(&data, &hyper)?;
    for (name, nuis) in [("cross-fitted", &out_of_fold), ("full sample", &in_sample)] {
        let d = nuis.diagnostics.as_ref().expect("diagnostics are attached");
        let tiny = nuis.g_hat.iter().filter(|&&g| !(1e-3..=1.0 - 1e-3).contains(&g)).count();
        let a = gdr(&data, nuis, WeightScheme::Aipw)?;
        let n = gdr(&data, nuis, WeightScheme::Naipw)?;
        println!(
            "{name:>12}: R² {:.3}, AUC {:.3}, {tiny} propensities outside [1e-3, 1-1e-3], aipw {:.4}, naipw {:.4}",
            d.outcome_r2, d.propensity_auc, a.beta_hat, n.beta_hat
        );
    }
    Ok(())
}

//! Injects propensities `10^-s` into the true nuisances of a generated
//! dataset and compares AIPW and nAIPW on the treated arm against the closed
//! forms, for one and then two affected units.
//!
//!     cargo run --example positivity_stress -- [out.csv]

use naipw::mc::{positivity_stress, StressSpec};

fn main() -> naipw::Result<()> {
    let spec = StressSpec::default();
    let report = positivity_stress(&spec)?;
    println!("n = {}, injected units k = {}, l = {} (t = s + {})", report.n, report.k, report.l, spec.gap);
    println!(
        "{:>5} {:>5} {:>14} {:>12} {:>12} {:>12} {:>10} {:>6}",
        "units", "s", "aipw_arm1", "naipw_arm1", "closed_form", "limit", "rel_err", "bound"
    );
    for r in &report.rows {
        println!(
            "{:>5} {:>5} {:>14.6e} {:>12.6} {:>12.6} {:>12.6} {:>10.2e} {:>6}",
            r.units, r.s, r.aipw_arm1, r.naipw_arm1, r.closed_form_arm1, r.limit_arm1, r.relative_error, r.within_bound
        );
    }
    println!("\n{:>5} {:>5} {:>14} {:>14}", "units", "s", "var_aipw", "var_naipw");
    for r in &report.rows {
        println!("{:>5} {:>5} {:>14.6e} {:>14.6e}", r.units, r.s, r.aipw_var, r.naipw_var);
    }
    if let Some(path) = std::env::args().nth(1) {
        report.write_csv(std::fs::File::create(&path)?)?;
        println!("wrote {path}");
    }
    Ok(())
}

//! Numeric Gateaux derivatives of the nAIPW, AIPW and plug-in moments at the
//! true nuisances of a large sample.
//!
//!     cargo run --example orthogonality_probe -- [n]

use naipw::dgp::generate;
use naipw::mc::{orthogonality_probe, Perturbation, ProbeSpec};

fn main() -> naipw::Result<()> {
    let mut spec = ProbeSpec::default();
    if let Some(n) = std::env::args().nth(1) {
        spec.dgp.n = n.parse().expect("n must be an integer");
    }
    let data = generate(&spec.dgp)?;
    let g = data.truth.as_ref().expect("synthetic data carries truth").g.clone();
    let full = Perturbation::standard(&data, &g, spec.g_scale);

    for (name, dir) in [("outcome and propensity", full.clone()), ("outcome only", full.outcome_only())] {
        let r = orthogonality_probe(&data, &dir, &spec.eps_grid)?;
        println!("direction: {name}, norm {:.4}, n = {}", r.direction_norm, r.n);
        println!("  {:>6} {:>12} {:>12} {:>12}", "eps", "naipw", "aipw", "sr");
        for i in 0..r.eps.len() {
            println!("  {:>6} {:>12.6} {:>12.6} {:>12.6}", r.eps[i], r.naipw[i], r.aipw[i], r.sr[i]);
        }
        println!("  slopes: naipw {:.5}, aipw {:.5}, sr {:.5}", r.naipw_slope, r.aipw_slope, r.sr_slope);
        println!("  noise floor 0.02·norm = {:.5}\n", 0.02 * r.direction_norm);
    }
    Ok(())
}

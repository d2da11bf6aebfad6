//! A small Monte Carlo study over an L1 grid, written to CSV.
//!
//!     cargo run --release --example monte_carlo_study -- [m] [out_dir]
//!
//! Pass `oracle` as the first argument to use the true nuisances instead.

use naipw::estimators::EstimatorKind;
use naipw::firststage::NetHyper;
use naipw::mc::{coverage, run_study, summarize_study, write_outputs, McConfig};

fn main() -> naipw::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut config = McConfig::default();
    match args.first().map(String::as_str) {
        Some("oracle") => config.study.oracle_mode = true,
        Some(m) => config.study.m = m.parse().expect("m must be an integer"),
        None => config.study.m = 5,
    }
    if config.study.oracle_mode {
        config.study.m = 200;
        config.dgp.n = 2000;
    }
    config.hyper = [0.0, 0.01, 0.1].map(|c| NetHyper::default().with_l1(c)).to_vec();

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let records = run_study(&config, workers)?;
    let summary = summarize_study(&config, &records);

    println!("{:>4} {:>7} {:>6} {:>9} {:>9} {:>9} {:>9} {:>8}", "cell", "est", "l1", "bias", "mc_std", "rmse", "mean_se", "cover");
    for r in &summary.rows {
        let Some(m) = r.metrics else { continue };
        let cover = coverage(&records, r.cell_id, r.estimator, config.dgp.beta_true, 1.959964)
            .map_or("-".into(), |c| format!("{:.3}", c));
        let se = m.mean_se.map_or("-".into(), |s| format!("{s:.4}"));
        println!(
            "{:>4} {:>7} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>9} {:>8}",
            r.cell_id, r.estimator.name(), r.l1, m.bias, m.mc_std, m.rmse, se, cover
        );
    }
    let naipw = summary.rows.iter().filter(|r| r.estimator == EstimatorKind::Naipw).count();
    println!("{naipw} nAIPW cells, {} failed fits", summary.total_failures());

    if let Some(dir) = args.get(1) {
        for p in write_outputs(dir.as_ref(), &summary, &records)? {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

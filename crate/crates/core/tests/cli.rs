use std::path::Path;
use std::process::{Command, Output};

use naipw::dgp::{generate, DgpSpec};

fn naipw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_naipw")).args(args).env("NAIPW_WORKERS", "1").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn write_dataset(dir: &Path) -> String {
    let mut spec = DgpSpec::small_design();
    spec.n = 300;
    let path = dir.join("data.csv");
    generate(&spec).unwrap().save_csv(&path).unwrap();
    path.display().to_string()
}

fn value_for(out: &str, name: &str) -> f64 {
    let line = out.lines().find(|l| l.split_whitespace().next() == Some(name)).unwrap();
    line.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn estimate_with_oracle_nuisances_recovers_plug_in() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let out = dir.path().join("out");
    let o = naipw(&["estimate", "--data", &data, "--oracle", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!((value_for(&text, "sr") - 1.0).abs() < 1e-6, "{text}");
    for k in ["nate", "ipw", "nipw", "aipw", "naipw", "hybrid"] {
        assert!(value_for(&text, k).is_finite());
    }
    let m = manifest(&out);
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["command"], "estimate");
    assert!(out.join("estimates.csv").exists());
}

#[test]
fn estimate_with_networks() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let out = dir.path().join("out");
    let o = naipw(&[
        "estimate", "--data", &data, "--out", out.to_str().unwrap(), "--hyper.epochs=5", "--crossfit.k=2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(value_for(&stdout(&o), "naipw").is_finite());
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("missing.csv");
    std::fs::write(&missing, "y,w1\n1.0,2.0\n").unwrap();
    let o = naipw(&["estimate", "--data", missing.to_str().unwrap(), "--oracle", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let msg_missing = stderr(&o);
    assert!(msg_missing.contains('a'), "{msg_missing}");

    let nonbinary = dir.path().join("nonbinary.csv");
    std::fs::write(&nonbinary, "y,a,w1\n1.0,2,0.5\n0.0,0,0.1\n").unwrap();
    let o = naipw(&["estimate", "--data", nonbinary.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert_ne!(stderr(&o), msg_missing);

    let o = naipw(&["estimate", "--data", dir.path().join("nope.csv").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(manifest(&out)["exit_code"], 3);
}

#[test]
fn config_errors_exit_2_and_still_write_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = naipw(&["simulate", "--config", dir.path().join("absent.toml").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot read config"));
    let m = manifest(&out);
    assert_eq!(m["exit_code"], 2);
    assert!(m["config_digest"].is_null());

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[study]\nreplications = 3\n").unwrap();
    let o = naipw(&["simulate", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("replications"));

    let o = naipw(&["validate", "--dgp.rho=1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

fn smoke_config(dir: &Path) -> String {
    let path = dir.join("smoke.toml");
    std::fs::write(
        &path,
        r#"
[dgp]
n = 200

[study]
m = 2
base_seed = 17

[crossfit]
k = 2

[[hyper]]
epochs = 5
l1_outcome = 0.0
l1_propensity = 0.0

[[hyper]]
epochs = 5
hidden_widths = ["q", "p", "q"]
l1_outcome = 0.01
l1_propensity = 0.01
"#,
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn simulate_smoke_is_consistent_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = naipw(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let summary = std::fs::read(a.join("summary.csv")).unwrap();
    assert_eq!(summary, std::fs::read(b.join("summary.csv")).unwrap());
    assert_eq!(std::fs::read(a.join("raw.csv")).unwrap(), std::fs::read(b.join("raw.csv")).unwrap());

    let mut rdr = csv::Reader::from_reader(summary.as_slice());
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["cell_id", "estimator", "scheme", "n", "p", "l1", "widths", "bias", "mc_std", "rmse", "mean_se", "failures"]
    );
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        rows += 1;
        let f = |i: usize| rec[i].parse::<f64>().unwrap();
        let (bias, sd, rmse) = (f(7), f(8), f(9));
        assert!((rmse * rmse - bias * bias - sd * sd).abs() <= 1e-12 * (1.0 + rmse * rmse), "{rec:?}");
    }
    assert_eq!(rows, 2 * 7);
    let raw = std::fs::read_to_string(a.join("raw.csv")).unwrap();
    assert_eq!(raw.lines().count(), 1 + 2 * 2 * 7);
    assert!(!raw.contains('\r'));

    let m = manifest(&a);
    assert_eq!(m["seed"], 17);
    assert_eq!(m["config_digest"], manifest(&b)["config_digest"]);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    let out = dir.path().join("o");
    let o = naipw(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--study.m=1", "--study.oracle_mode=true"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let raw = std::fs::read_to_string(out.join("raw.csv")).unwrap();
    // One replication, one oracle cell, seven estimators.
    assert_eq!(raw.lines().count(), 1 + 7);
}

#[test]
fn stress_row_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = naipw(&["stress", "--s", "8", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(out.join("stress.csv")).unwrap();
    let h = rdr.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(&r[col("s")], "8");
        let rel: f64 = r[col("relative_error")].parse().unwrap();
        assert!(rel < 0.01, "{r:?}");
        assert_eq!(&r[col("within_bound")], "true");
    }
}

#[test]
fn probe_writes_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    let o = naipw(&["probe", "--probe.n=5000", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("probe.csv")).unwrap();
    assert!(text.starts_with("eps,naipw,aipw,sr\n"));
    assert!(text.lines().last().unwrap().starts_with("slope,"));
    assert!(stdout(&o).contains("slope naipw"));
}

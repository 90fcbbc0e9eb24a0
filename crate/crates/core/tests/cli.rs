use std::process::{Command, Output};

use igeo::report::ReportDocument;

fn igeo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_igeo"))
        .args(args)
        .env_remove("IGEO_QUAD_ORDER")
        .output()
        .unwrap()
}

fn doc(out: &Output) -> ReportDocument {
    ReportDocument::from_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap()
}

#[test]
fn geometry_report_round_trips() {
    let out = igeo(&["geometry", "--family", "gaussian-loc-scale", "--theta", "0.2,1.3", "--source", "both"]);
    assert_eq!(out.status.code(), Some(0));
    let report = doc(&out);
    assert_eq!(report.schema_version, "1");
    assert_eq!(report.points.len(), 1);
    let cross = report.points[0].cross.as_ref().unwrap();
    assert!(cross.metric_rel < 1e-5 && cross.gamma_abs < 5e-3, "{cross:?}");
    assert_eq!(report.to_json().unwrap().as_bytes(), &out.stdout[..]);
}

#[test]
fn renyi_metric_is_scaled_fisher() {
    let fisher = doc(&igeo(&["geometry", "--family", "bernoulli-mean", "--theta", "0.3", "--divergence", "kl"]));
    let renyi = doc(&igeo(&[
        "geometry", "--family", "bernoulli-mean", "--theta", "0.3", "--divergence", "renyi", "--rho", "0.5",
    ]));
    let g = |d: &ReportDocument| d.points[0].analytic.as_ref().unwrap().metric.g[(0, 0)];
    assert!((g(&renyi) - 0.5 * g(&fisher)).abs() < 1e-12);
    assert!((g(&fisher) - 1.0 / 0.21).abs() < 1e-9);
}

#[test]
fn csv_output_has_one_row_per_point() {
    let out = igeo(&["priors", "--family", "bernoulli-natural", "--label", "jeffreys", "--grid", "-1:1:5", "--out", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    assert!(rows.headers().unwrap().iter().any(|h| h == "theta_0"));
    assert_eq!(rows.records().count(), 5);
}

#[test]
fn family_config_file_matches_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("normal.json");
    std::fs::write(
        &path,
        r#"{
  "kind": "exponential",
  "name": "normal-mean",
  "space": {"type": "real-line", "center": 0.0, "scale": 1.0},
  "sufficient_stats": ["y"],
  "carrier": "-y^2 / 2.0",
  "domain": {"lower": [null], "upper": [null]}
}"#,
    )
    .unwrap();
    let cfg = doc(&igeo(&["geometry", "--family-config", path.to_str().unwrap(), "--theta", "0.4"]));
    let reference = doc(&igeo(&["geometry", "--family", "gaussian-loc", "--theta", "0.4"]));
    let g = |d: &ReportDocument| d.points[0].analytic.as_ref().unwrap().metric.g[(0, 0)];
    assert!((g(&cfg) - g(&reference)).abs() < 1e-9, "{} vs {}", g(&cfg), g(&reference));
}

#[test]
fn exit_codes() {
    let code = |args: &[&str]| igeo(args).status.code();
    assert_eq!(code(&["geometry", "--family", "weibull", "--theta", "1"]), Some(2));
    assert_eq!(code(&["geometry", "--family", "bernoulli-mean", "--theta", "0.3", "--divergence", "renyi"]), Some(2));
    assert_eq!(code(&["priors", "--family", "bernoulli-mean", "--label", "rho", "--rho", "1", "--theta", "0.3"]), Some(2));
    assert_eq!(code(&["geometry", "--family", "bernoulli-mean", "--theta", "1.5"]), Some(3));
    assert_eq!(code(&["verify", "--suite", "priors", "--seed", "3"]), Some(0));
    assert_eq!(code(&["verify", "--suite", "eguchi", "--tol", "eguchi.metric=1e-14"]), Some(1));
    assert_eq!(code(&["frobnicate"]), Some(2));
}

#[test]
fn quadrature_order_from_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_igeo"))
        .args(["geometry", "--family", "gaussian-loc", "--theta", "0.1"])
        .env("IGEO_QUAD_ORDER", "60")
        .output()
        .unwrap();
    let report = doc(&out);
    assert_eq!(report.settings.quadrature_order, 60);
    assert_eq!(report.settings.quadrature_order_env.as_deref(), Some("60"));
}

#[test]
fn reports_carry_the_schema_required_keys() {
    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../../../schemas/report-v1.json")).unwrap();
    let out = igeo(&["tables", "--family", "bernoulli-mean", "--theta", "0.3", "--theta", "0.6"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in schema["required"].as_array().unwrap() {
        assert!(report.get(key.as_str().unwrap()).is_some(), "missing {key}");
    }
    let column = &report["tables"][0]["columns"][0];
    for key in schema["$defs"]["table"]["properties"]["columns"]["items"]["required"].as_array().unwrap() {
        assert!(column.get(key.as_str().unwrap()).is_some(), "missing column key {key}");
    }
}

//! Report documents emitted by the command-line front end.
//!
//! JSON is canonical: maps are ordered, floats round-trip, and nothing
//! depends on time or thread scheduling. CSV is a projection of the per-point
//! results without diagnostics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::eguchi::GeometrySnapshot;
use crate::error::{Error, Result};
use crate::laplace::ReparamCertificate;
use crate::models::ModelFamily;
use crate::priors::DualityReport;
use crate::tensors::{GeometryLabel, Tensor3};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: String,
    pub tool_version: String,
    /// Arguments after the program name.
    pub command: Vec<String>,
    pub settings: Settings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyDescriptor>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<PointResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tables: Vec<Table>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<Check>,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub quadrature_order: usize,
    /// Raw value of `IGEO_QUAD_ORDER`, if set.
    pub quadrature_order_env: Option<String>,
    pub quadrature_rel_tol: f64,
    pub fd_steps: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    /// Tolerances changed with `--tol`.
    pub overrides: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyDescriptor {
    pub name: String,
    pub dim: usize,
    pub structure: String,
    pub anchor: Vec<f64>,
}

impl FamilyDescriptor {
    pub fn of(family: &ModelFamily) -> Self {
        Self {
            name: family.name().to_string(),
            dim: family.dim(),
            structure: family.flat_structure().to_string(),
            anchor: family.anchor().to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub index: usize,
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytic: Option<GeometrySnapshot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eguchi: Option<GeometrySnapshot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross: Option<CrossResidual>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorValues>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub laplacians: Vec<LaplacianValue>,
    pub pass: bool,
}

/// Eguchi-versus-analytic differences at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossResidual {
    pub metric_rel: f64,
    pub gamma_abs: f64,
    pub gamma_dual_abs: f64,
}

impl CrossResidual {
    pub fn between(eguchi: &GeometrySnapshot, analytic: &GeometrySnapshot) -> Self {
        let ga = &analytic.metric.g;
        let scale = ga.abs().max().max(f64::MIN_POSITIVE);
        Self {
            metric_rel: (&eguchi.metric.g - ga).abs().max() / scale,
            gamma_abs: eguchi.gamma.gamma.max_abs_diff(&analytic.gamma.gamma),
            gamma_dual_abs: eguchi.gamma_dual.gamma.max_abs_diff(&analytic.gamma_dual.gamma),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorValues {
    pub prior: String,
    /// Anchored at the reference point.
    pub log_value: f64,
    /// `closed-form` or `path`.
    pub method: String,
    pub log_derivative: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_form: Option<f64>,
    pub reconstructed: f64,
    pub refinement_gap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelity_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<PriorComparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Hartigan log-derivative against the Rho connection contraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorComparison {
    pub rho: f64,
    pub rho_log_derivative: Vec<f64>,
    pub max_abs_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplacianValue {
    pub field: String,
    pub label: GeometryLabel,
    pub value: f64,
    /// Whether the field's derivatives came from finite differences.
    pub fd_field: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub theta: Vec<f64>,
    pub theta_prime: Vec<f64>,
    pub columns: Vec<TableColumn>,
}

/// One geometry in a table; the rows of the published tables are the fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableColumn {
    pub divergence: String,
    pub divergence_value: f64,
    pub metric_scale: f64,
    pub metric: Vec<Vec<f64>>,
    pub connection: GeometryLabel,
    pub dual_connection: GeometryLabel,
    pub gamma: Tensor3,
    pub gamma_dual: Tensor3,
    pub cov_e_exponent: f64,
    pub cov_e_dual_exponent: f64,
    pub cov_m_exponent: f64,
    pub cov_m_dual_exponent: f64,
    pub log_conformal_prefactor: f64,
    /// Anchored log-covolumes, present when the family's chart matches.
    pub cov_e_log: Option<f64>,
    pub cov_e_dual_log: Option<f64>,
    pub cov_m_log: Option<f64>,
    pub cov_m_dual_log: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    /// Measured residual; absent when the computation itself failed.
    pub value: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<CheckDetail>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum CheckDetail {
    Message { text: String },
    Certificate(ReparamCertificate),
    Duality(DualityReport),
}

impl ReportDocument {
    pub fn new(command: Vec<String>, settings: Settings) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            settings,
            family: None,
            points: Vec::new(),
            tables: Vec::new(),
            checks: Vec::new(),
            pass: true,
        }
    }

    /// Sets `pass` from the points and checks.
    pub fn finish(&mut self) {
        self.pass = self.points.iter().all(|p| p.pass) && self.checks.iter().all(|c| c.pass);
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Per-point rows (or table columns, or checks) as CSV.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Config(e.to_string());
        if !self.points.is_empty() {
            let header = point_header(&self.points[0]);
            w.write_record(&header).map_err(err)?;
            for p in &self.points {
                w.write_record(point_row(p)).map_err(err)?;
            }
        } else if !self.tables.is_empty() {
            w.write_record([
                "table", "divergence", "value", "metric_scale", "connection", "dual_connection",
                "cov_e", "cov_e_dual", "cov_m", "cov_m_dual", "log_prefactor",
            ])
            .map_err(err)?;
            for t in &self.tables {
                for c in &t.columns {
                    w.write_record([
                        t.title.clone(),
                        c.divergence.clone(),
                        num(c.divergence_value),
                        num(c.metric_scale),
                        c.connection.to_string(),
                        c.dual_connection.to_string(),
                        num(c.cov_e_exponent),
                        num(c.cov_e_dual_exponent),
                        num(c.cov_m_exponent),
                        num(c.cov_m_dual_exponent),
                        num(c.log_conformal_prefactor),
                    ])
                    .map_err(err)?;
                }
            }
        } else {
            w.write_record(["suite", "name", "value", "tolerance", "pass"]).map_err(err)?;
            for c in &self.checks {
                w.write_record([
                    c.suite.clone(),
                    c.name.clone(),
                    c.value.map(num).unwrap_or_default(),
                    num(c.tolerance),
                    c.pass.to_string(),
                ])
                .map_err(err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
    }
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn tensor_cols(prefix: &str, n: usize, out: &mut Vec<String>) {
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out.push(format!("{prefix}_{i}{j}{k}"));
            }
        }
    }
}

fn snapshot_header(prefix: &str, n: usize, out: &mut Vec<String>) {
    for i in 0..n {
        for j in 0..n {
            out.push(format!("{prefix}_g_{i}{j}"));
        }
    }
    tensor_cols(&format!("{prefix}_gamma"), n, out);
    tensor_cols(&format!("{prefix}_gamma_dual"), n, out);
    out.push(format!("{prefix}_compatibility"));
}

fn snapshot_row(s: &GeometrySnapshot, out: &mut Vec<String>) {
    let n = s.gamma.gamma.n;
    for i in 0..n {
        for j in 0..n {
            out.push(num(s.metric.g[(i, j)]));
        }
    }
    out.extend(s.gamma.gamma.data.iter().map(|v| num(*v)));
    out.extend(s.gamma_dual.gamma.data.iter().map(|v| num(*v)));
    out.push(s.compatibility_residual.map(num).unwrap_or_default());
}

fn point_header(p: &PointResult) -> Vec<String> {
    let n = p.theta.len();
    let mut h = vec!["index".to_string()];
    h.extend((0..n).map(|i| format!("theta_{i}")));
    if p.analytic.is_some() {
        snapshot_header("analytic", n, &mut h);
    }
    if p.eguchi.is_some() {
        snapshot_header("eguchi", n, &mut h);
    }
    if p.cross.is_some() {
        h.extend(["cross_metric_rel", "cross_gamma_abs", "cross_gamma_dual_abs"].map(String::from));
    }
    if let Some(pr) = &p.prior {
        h.push("log_prior".into());
        h.extend((0..n).map(|i| format!("dlog_prior_{i}")));
        if pr.comparison.is_some() {
            h.extend((0..n).map(|i| format!("dlog_rho_{i}")));
        }
    }
    for l in &p.laplacians {
        h.push(format!("laplacian_{}_{}", l.field, l.label));
    }
    h.push("pass".into());
    h
}

fn point_row(p: &PointResult) -> Vec<String> {
    let mut r = vec![p.index.to_string()];
    r.extend(p.theta.iter().map(|v| num(*v)));
    if let Some(s) = &p.analytic {
        snapshot_row(s, &mut r);
    }
    if let Some(s) = &p.eguchi {
        snapshot_row(s, &mut r);
    }
    if let Some(c) = &p.cross {
        r.extend([c.metric_rel, c.gamma_abs, c.gamma_dual_abs].map(num));
    }
    if let Some(pr) = &p.prior {
        r.push(num(pr.log_value));
        r.extend(pr.log_derivative.iter().map(|v| num(*v)));
        if let Some(c) = &pr.comparison {
            r.extend(c.rho_log_derivative.iter().map(|v| num(*v)));
        }
    }
    r.extend(p.laplacians.iter().map(|l| num(l.value)));
    r.push(p.pass.to_string());
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin;
    use crate::tensors::analytic_snapshot;

    fn sample() -> ReportDocument {
        let coin = builtin("bernoulli-mean").unwrap();
        let mut doc = ReportDocument::new(vec!["geometry".into()], Settings::default());
        doc.family = Some(FamilyDescriptor::of(&coin));
        let snap = analytic_snapshot(GeometryLabel::Rho(0.5), &coin, &[0.3]).unwrap();
        doc.points.push(PointResult {
            index: 0,
            theta: vec![0.3],
            analytic: Some(snap),
            eguchi: None,
            cross: None,
            prior: None,
            laplacians: vec![],
            pass: true,
        });
        doc.finish();
        doc
    }

    #[test]
    fn json_round_trip_is_exact() {
        let doc = sample();
        let text = doc.to_json().unwrap();
        let back = ReportDocument::from_json(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn csv_has_one_row_per_point() {
        let csv = sample().to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("index,theta_0,analytic_g_00"));
    }
}

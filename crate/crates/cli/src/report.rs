use std::collections::BTreeMap;
use std::io::Write;

use anyhow::Result;
use boxprob::robustness::BoxMass;
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct ModelSummary {
    pub kind: &'static str,
    pub n_features: usize,
    pub n_classes: usize,
    pub n_trees: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub sample: usize,
    pub method: String,
    pub label: usize,
    pub robustness: f64,
    pub misclassification_probability: f64,
    pub boxes_enumerated: u64,
    pub boxes_matching: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integration_err: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unconverged_boxes: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prune_error_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_masses: Option<Vec<BoxMass>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Failure {
    pub sample: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub error: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Agreement {
    pub reference: String,
    pub method: String,
    /// Samples on which both methods succeeded.
    pub n: usize,
    /// `None` when the reference values are constant and differ from the
    /// compared ones.
    pub r_squared: Option<f64>,
    pub max_abs_diff: Option<f64>,
    /// Samples where `full - pruned` leaves `[0, 1 - level]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_violations: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub command: &'static str,
    pub model: ModelSummary,
    pub methods: Vec<String>,
    pub seed: u64,
    pub n_samples: usize,
    pub rows: Vec<Row>,
    pub failures: Vec<Failure>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub agreement: Vec<Agreement>,
}

/// Agreement with the identity line: `1 - Σ(y-x)² / Σ(y-ȳ)²`, with `x` the
/// reference values.
pub fn r_squared(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.is_empty() {
        return None;
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - mean).powi(2)).sum();
    if ss_res == 0.0 {
        Some(1.0)
    } else if ss_tot == 0.0 {
        None
    } else {
        Some(1.0 - ss_res / ss_tot)
    }
}

pub fn max_abs_diff(x: &[f64], y: &[f64]) -> Option<f64> {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).reduce(f64::max)
}

/// Per-method values keyed by sample id, for samples where the method
/// succeeded.
pub fn by_method(rows: &[Row]) -> BTreeMap<&str, BTreeMap<usize, &Row>> {
    let mut out: BTreeMap<&str, BTreeMap<usize, &Row>> = BTreeMap::new();
    for r in rows {
        out.entry(r.method.as_str()).or_default().insert(r.sample, r);
    }
    out
}

pub fn write_json(report: &Report, out: &mut impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, report)?;
    writeln!(out)?;
    Ok(())
}

/// Rows only; failures and agreement go to stderr.
pub fn write_csv(report: &Report, out: &mut impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "sample",
        "method",
        "label",
        "robustness",
        "boxes_enumerated",
        "boxes_matching",
        "std_error",
        "wall_time_ms",
    ])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in &report.rows {
        w.write_record([
            r.sample.to_string(),
            r.method.clone(),
            r.label.to_string(),
            r.robustness.to_string(),
            r.boxes_enumerated.to_string(),
            r.boxes_matching.to_string(),
            opt(r.std_error),
            opt(r.wall_time_ms),
        ])?;
    }
    w.flush()?;
    for a in &report.agreement {
        eprintln!(
            "agreement {} vs {}: n={} r_squared={} max_abs_diff={}",
            a.reference,
            a.method,
            a.n,
            opt(a.r_squared),
            opt(a.max_abs_diff)
        );
    }
    Ok(())
}

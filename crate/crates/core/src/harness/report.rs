//! Experiment reports and their on-disk forms.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::harness::config::OutputFormat;
use crate::metrics::{DecayFit, Interval};
use crate::model::IndependenceReport;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Metric columns of `metrics.csv`, in order. Each is followed by its
/// `_hw` half-width column.
pub const METRIC_COLUMNS: [&str; 7] = ["tau", "tpr", "tpr_p", "tpr_u", "tpr_disparity", "fpr", "accuracy"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResumeDisparitySummary {
    /// Threshold the probes were evaluated at: the scheme's mean learned threshold.
    pub tau: f64,
    pub probes: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub exact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchemeReport {
    pub scheme: String,
    pub tickets: usize,
    /// Intervals over splits, keyed by metric name (`tau`, `tpr`, ...).
    pub metrics: BTreeMap<String, Interval>,
    /// Paired per-split differences against the traditional scheme.
    pub versus_traditional: BTreeMap<String, Interval>,
    pub resume_disparity: Option<ResumeDisparitySummary>,
}

impl SchemeReport {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).map(|i| i.mean)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub n: usize,
    pub delta_tpr: f64,
    pub delta_tpr_abs: f64,
    pub tpr_p: f64,
    pub tpr_u: f64,
    /// `k^n |delta_tpr at n = 0|`; absent when no analytic `k` is known.
    pub analytic_envelope: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub mode: String,
    pub seed: u64,
    pub config_digest: Option<String>,
    pub version: String,
    pub candidates: usize,
    pub confidence: f64,
    pub splits: usize,
    pub skipped_splits: usize,
    pub schemes: Vec<SchemeReport>,
    pub independence: Option<IndependenceReport>,
    pub disparity_curve: Vec<CurveRow>,
    pub decay_fit: Option<DecayFit>,
}

impl ExperimentReport {
    pub fn scheme(&self, name: &str) -> Option<&SchemeReport> {
        self.schemes.iter().find(|s| s.scheme == name)
    }

    /// `metrics.csv`: one row per scheme.
    pub fn metrics_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["scheme".to_string(), "condition".to_string()];
        for c in METRIC_COLUMNS {
            header.push(c.to_string());
            header.push(format!("{c}_hw"));
        }
        header.push("skipped_splits".into());
        w.write_record(&header)?;
        for s in &self.schemes {
            let mut row = vec![s.scheme.clone(), self.name.clone()];
            for c in METRIC_COLUMNS {
                let iv = s.metrics.get(c);
                row.push(iv.map(|i| i.mean.to_string()).unwrap_or_default());
                row.push(iv.and_then(|i| i.half_width).map(|h| h.to_string()).unwrap_or_default());
            }
            row.push(self.skipped_splits.to_string());
            w.write_record(&row)?;
        }
        Ok(w.into_inner().map_err(|e| e.into_error())?)
    }

    pub fn json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    /// Writes `report.json`, `metrics.csv`, `disparity_curve.csv` and
    /// `run_meta.json` as selected by `format`.
    pub fn persist(&self, dir: &Path, format: OutputFormat) -> Result<()> {
        fs::create_dir_all(dir)?;
        if format.json() {
            fs::write(dir.join("report.json"), self.json()?)?;
        }
        if format.csv() {
            fs::write(dir.join("metrics.csv"), self.metrics_csv()?)?;
            if !self.disparity_curve.is_empty() {
                fs::write(dir.join("disparity_curve.csv"), curve_csv(&self.disparity_curve)?)?;
            }
        }
        write_meta(dir, self.seed, self.config_digest.as_deref(), &self.name)
    }

    /// Fixed-precision summary table.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{} ({}), seed {}, {} splits ({} skipped), {:.0}% intervals\n",
            self.name,
            self.mode,
            self.seed,
            self.splits,
            self.skipped_splits,
            self.confidence * 100.0
        ));
        out.push_str(&format!(
            "{:<14} {:>20} {:>20} {:>20} {:>24}\n",
            "scheme", "TPR", "delta_TPR", "accuracy", "tau*"
        ));
        let cell = |s: &SchemeReport, k: &str| match s.metrics.get(k) {
            Some(i) => match i.half_width {
                Some(h) => format!("{:.4} ± {:.4}", i.mean, h),
                None => format!("{:.4}", i.mean),
            },
            None => "n/a".into(),
        };
        for s in &self.schemes {
            out.push_str(&format!(
                "{:<14} {:>20} {:>20} {:>20} {:>24}\n",
                s.scheme,
                cell(s, "tpr"),
                cell(s, "tpr_disparity"),
                cell(s, "accuracy"),
                cell(s, "tau")
            ));
        }
        out
    }
}

#[derive(Serialize)]
struct RunMeta<'a> {
    name: &'a str,
    seed: u64,
    config_digest: Option<&'a str>,
    version: &'a str,
}

pub fn write_meta(dir: &Path, seed: u64, digest: Option<&str>, name: &str) -> Result<()> {
    let meta = RunMeta {
        name,
        seed,
        config_digest: digest,
        version: VERSION,
    };
    let mut f = fs::File::create(dir.join("run_meta.json"))?;
    serde_json::to_writer_pretty(&mut f, &meta)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// `disparity_curve.csv` with columns `n, delta_tpr_abs, analytic_envelope`.
pub fn curve_csv(rows: &[CurveRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "delta_tpr_abs", "analytic_envelope"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.delta_tpr_abs.to_string(),
            r.analytic_envelope.map(|e| e.to_string()).unwrap_or_default(),
        ])?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

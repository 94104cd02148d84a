use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::survival::{CalibrationPoint, HazardRatio};

pub const REPORT_VERSION: &str = "1.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub report_version: String,
    pub crate_version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
    /// Seconds since the Unix epoch; the only field allowed to differ
    /// between reruns.
    pub timestamp: u64,
}

impl Provenance {
    pub fn new(config: &ExperimentConfig) -> Self {
        Provenance {
            report_version: REPORT_VERSION.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            config: config.clone(),
            config_hash: config_hash(config),
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample SD (n − 1) across fold values; 0 for a single fold.
    pub sd: f64,
    pub n: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let sd = if values.len() > 1 {
            crate::dataset::sample_sd(values)
        } else {
            0.0
        };
        Some(Aggregate {
            mean: crate::dataset::mean(values),
            sd,
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationFold {
    pub repetition: usize,
    pub fold: usize,
    pub n_train: usize,
    pub n_synthetic: usize,
    pub n_test: usize,
    pub c_index: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrimination {
    pub folds: Vec<DiscriminationFold>,
    pub aggregate: Option<Aggregate>,
}

impl Discrimination {
    pub fn values(&self) -> Vec<f64> {
        self.folds.iter().filter_map(|f| f.c_index).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFold {
    pub repetition: usize,
    pub fold: usize,
    pub cohort: String,
    pub percentile: f64,
    pub n_train_cohort: usize,
    pub n_synthetic: usize,
    pub n_test_cohort: usize,
    pub horizon: Option<f64>,
    pub slope: Option<f64>,
    pub deviation: Option<f64>,
    pub points: Vec<CalibrationPoint>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub cohort: String,
    pub percentile: f64,
    pub aggregate: Option<Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResults {
    pub folds: Vec<CalibrationFold>,
    pub summary: Vec<CalibrationSummary>,
}

impl CalibrationResults {
    pub fn values(&self, cohort: &str, percentile: f64) -> Vec<f64> {
        self.folds
            .iter()
            .filter(|f| f.cohort == cohort && f.percentile == percentile)
            .filter_map(|f| f.deviation)
            .collect()
    }

    pub fn summary_for(&self, cohort: &str, percentile: f64) -> Option<Aggregate> {
        self.summary
            .iter()
            .find(|s| s.cohort == cohort && s.percentile == percentile)
            .and_then(|s| s.aggregate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureComparison {
    pub feature: String,
    pub kind: crate::dataset::FeatureKind,
    pub real_mean: f64,
    pub synthetic_mean: f64,
    /// Continuous features only.
    pub real_sd: Option<f64>,
    pub synthetic_sd: Option<f64>,
    pub ks_statistic: Option<f64>,
    /// Binary features only: |p_real − p_synthetic|.
    pub proportion_difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrComparison {
    pub covariate: String,
    pub real: HazardRatio,
    pub synthetic: HazardRatio,
    pub ci_overlap: bool,
    /// The synthetic point estimate lies inside the real 95% CI.
    pub synthetic_in_real_ci: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: String,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discrimination: Option<Discrimination>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationResults>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<Vec<FeatureComparison>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hazard_ratios: Option<Vec<HrComparison>>,
}

impl MetricsReport {
    pub fn new(experiment: &str, config: &ExperimentConfig) -> Self {
        MetricsReport {
            experiment: experiment.into(),
            provenance: Provenance::new(config),
            discrimination: None,
            calibration: None,
            distribution: None,
            hazard_ratios: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// JSON with the timestamp zeroed, for reproducibility comparisons.
    pub fn to_json_without_timestamp(&self) -> String {
        let mut copy = self.clone();
        copy.provenance.timestamp = 0;
        copy.to_json()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

pub const CSV_COLUMNS: [&str; 11] = [
    "row_type",
    "method",
    "metric",
    "subject",
    "percentile",
    "repetition",
    "fold",
    "value",
    "sd",
    "n",
    "error",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Flat rows: one per fold value and one aggregate row per metric.
pub fn report_csv_rows(report: &MetricsReport) -> Vec<[String; 11]> {
    let method = report.provenance.config.method.as_str().to_string();
    let mut rows = Vec::new();
    let fold_row = |metric: &str, subject: &str, pct: Option<f64>, rep, fold, v: Option<f64>, err: &Option<String>| {
        [
            "fold".to_string(),
            method.clone(),
            metric.to_string(),
            subject.to_string(),
            fmt_opt(pct),
            format!("{rep}"),
            format!("{fold}"),
            fmt_opt(v),
            String::new(),
            String::new(),
            err.clone().unwrap_or_default(),
        ]
    };
    let agg_row = |metric: &str, subject: &str, pct: Option<f64>, a: Option<Aggregate>| {
        [
            "aggregate".to_string(),
            method.clone(),
            metric.to_string(),
            subject.to_string(),
            fmt_opt(pct),
            String::new(),
            String::new(),
            fmt_opt(a.map(|a| a.mean)),
            fmt_opt(a.map(|a| a.sd)),
            a.map_or(0, |a| a.n).to_string(),
            String::new(),
        ]
    };
    if let Some(d) = &report.discrimination {
        for f in &d.folds {
            rows.push(fold_row("c_index", "", None, f.repetition, f.fold, f.c_index, &f.error));
        }
        rows.push(agg_row("c_index", "", None, d.aggregate));
    }
    if let Some(c) = &report.calibration {
        for s in &c.summary {
            for f in c.folds.iter().filter(|f| f.cohort == s.cohort && f.percentile == s.percentile) {
                rows.push(fold_row(
                    "calibration_deviation",
                    &f.cohort,
                    Some(f.percentile),
                    f.repetition,
                    f.fold,
                    f.deviation,
                    &f.error,
                ));
            }
            rows.push(agg_row("calibration_deviation", &s.cohort, Some(s.percentile), s.aggregate));
        }
    }
    if let Some(dist) = &report.distribution {
        for f in dist {
            let (metric, v) = match (f.ks_statistic, f.proportion_difference) {
                (Some(ks), _) => ("ks_statistic", ks),
                (None, Some(d)) => ("proportion_difference", d),
                (None, None) => continue,
            };
            let mut r = fold_row(metric, &f.feature, None, 0, 0, Some(v), &None);
            r[0] = "feature".into();
            r[5].clear();
            r[6].clear();
            rows.push(r);
        }
    }
    if let Some(hr) = &report.hazard_ratios {
        for h in hr {
            let mut r = fold_row("ci_overlap", &h.covariate, None, 0, 0, Some(f64::from(u8::from(h.ci_overlap))), &None);
            r[0] = "covariate".into();
            r[5].clear();
            r[6].clear();
            rows.push(r);
        }
    }
    rows
}

pub fn write_report_csv<W: Write>(report: &MetricsReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_COLUMNS)?;
    for row in report_csv_rows(report) {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn emit_report(report: &MetricsReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    match format {
        ReportFormat::Json => {
            std::fs::write(path, report.to_json() + "\n").map_err(|e| Error::io(path, e))
        }
        ReportFormat::Csv => {
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            write_report_csv(report, std::io::BufWriter::new(file))
        }
    }
}

/// Hazard-ratio forest-plot rows: covariate, side, HR and CI bounds.
pub fn write_hr_forest_csv<W: Write>(rows: &[HrComparison], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["covariate", "source", "hr", "ci_lo", "ci_hi"])?;
    for r in rows {
        for (side, h) in [("real", &r.real), ("synthetic", &r.synthetic)] {
            w.write_record([
                r.covariate.clone(),
                side.to_string(),
                h.hr.to_string(),
                h.ci_lo.to_string(),
                h.ci_hi.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Calibration-plot rows: one per fold bin.
pub fn write_calibration_points_csv<W: Write>(results: &CalibrationResults, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cohort", "percentile", "repetition", "fold", "bin", "size", "predicted", "observed"])?;
    for f in &results.folds {
        for (b, p) in f.points.iter().enumerate() {
            w.write_record([
                f.cohort.clone(),
                f.percentile.to_string(),
                f.repetition.to_string(),
                f.fold.to_string(),
                b.to_string(),
                p.size.to_string(),
                p.predicted.to_string(),
                p.observed.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

use serde::{Deserialize, Serialize};

use super::cox::{predict_survival, BaselineHazard, CoxModel};
use super::metrics::{kaplan_meier, percentile_horizon};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub size: usize,
    pub predicted: f64,
    pub observed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub horizon: f64,
    pub slope: f64,
    pub deviation: f64,
    pub points: Vec<CalibrationPoint>,
    /// Bins merged into a neighbour because their KM estimate was undefined
    /// at the horizon.
    pub merged_bins: usize,
}

/// Ordinary least-squares slope of observed on predicted risk.
pub fn calibration_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Numerical("calibration slope needs at least two bins".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let scale: f64 = points.iter().map(|p| p.0 * p.0).sum::<f64>().max(f64::MIN_POSITIVE);
    if !(sxx > 1e-24 * scale) {
        return Err(Error::Numerical(
            "predicted risks are constant across bins; slope undefined".into(),
        ));
    }
    Ok(sxy / sxx)
}

/// Calibration slope at the `percentile` horizon of the cohort's durations.
///
/// Rows are ranked by predicted risk `1 - S(t*|x)` into `n_bins` quantile bins;
/// each bin contributes its mean predicted risk and `1 - KM(t*)`. A bin whose
/// rows are all censored before `t*` has no KM estimate there and is merged
/// into its neighbour.
pub fn calibration_deviation(
    model: &CoxModel,
    baseline: &BaselineHazard,
    cohort: &Dataset,
    percentile: f64,
    n_bins: usize,
) -> Result<Calibration> {
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(Error::InvalidArgument(format!(
            "percentile must lie in (0, 100), got {percentile}"
        )));
    }
    if n_bins < 2 || cohort.n_rows() < 2 * n_bins {
        return Err(Error::InvalidArgument(format!(
            "calibration with {n_bins} bins needs at least {} rows, cohort has {}",
            2 * n_bins,
            cohort.n_rows()
        )));
    }
    let durations = cohort.durations();
    let events = cohort.events();
    let horizon = percentile_horizon(&durations, percentile)?;
    let x = model.design(cohort)?;
    let risk: Vec<f64> = x
        .iter()
        .map(|r| 1.0 - predict_survival(model, baseline, r, horizon))
        .collect();

    let mut order: Vec<usize> = (0..risk.len()).collect();
    order.sort_by(|&a, &b| risk[a].total_cmp(&risk[b]).then(a.cmp(&b)));
    let n = order.len();
    let mut bins: Vec<Vec<usize>> = (0..n_bins)
        .map(|b| order[b * n / n_bins..(b + 1) * n / n_bins].to_vec())
        .collect();

    let undefined = |bin: &[usize]| {
        bin.iter()
            .all(|&i| durations[i] < horizon && !events[i])
    };
    let mut merged_bins = 0;
    while let Some(k) = bins.iter().position(|b| undefined(b)) {
        if bins.len() < 2 {
            break;
        }
        log::debug!("calibration bin {k} has no follow-up at t={horizon}; merging");
        let bin = bins.remove(k);
        let target = if k < bins.len() { k } else { k - 1 };
        bins[target].extend(bin);
        merged_bins += 1;
    }

    let points: Vec<CalibrationPoint> = bins
        .iter()
        .map(|bin| {
            let d: Vec<f64> = bin.iter().map(|&i| durations[i]).collect();
            let e: Vec<bool> = bin.iter().map(|&i| events[i]).collect();
            CalibrationPoint {
                size: bin.len(),
                predicted: bin.iter().map(|&i| risk[i]).sum::<f64>() / bin.len() as f64,
                observed: 1.0 - kaplan_meier(&d, &e).at(horizon),
            }
        })
        .collect();
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.predicted, p.observed)).collect();
    let slope = calibration_slope(&pairs)?;
    Ok(Calibration {
        horizon,
        slope,
        deviation: (slope - 1.0).abs(),
        points,
        merged_bins,
    })
}

//! Survival statistics used to probe the utility of generated data: Cox
//! proportional hazards with Breslow or Efron ties, the Breslow baseline
//! hazard, Harrell's concordance, Kaplan–Meier and binned calibration.

mod calibration;
mod cox;
mod metrics;

pub use calibration::{
    calibration_deviation, calibration_slope, Calibration, CalibrationPoint, DEFAULT_BINS,
};
pub use cox::{
    breslow_baseline, fit_cox, fit_coxph, fit_coxph_with, hazard_ratios, predict_survival,
    BaselineHazard, CoxModel, CoxOptions, HazardRatio, TiesMethod, Z_95,
};
pub use metrics::{concordance_index, kaplan_meier, percentile_horizon, StepFunction};

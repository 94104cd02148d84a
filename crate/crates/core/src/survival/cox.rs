use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Normal quantile for two-sided 95% intervals.
pub const Z_95: f64 = 1.959964;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiesMethod {
    #[default]
    Breslow,
    Efron,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxOptions {
    pub ties: TiesMethod,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub max_halvings: usize,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions {
            ties: TiesMethod::Breslow,
            max_iterations: 100,
            tolerance: 1e-6,
            max_halvings: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub covariate_names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Inverse observed information at the estimate.
    pub covariance: Vec<Vec<f64>>,
    pub ties: TiesMethod,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
}

impl CoxModel {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.coefficients.iter().zip(x).map(|(b, x)| b * x).sum()
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.coefficients.len())
            .map(|i| self.covariance[i][i].max(0.0).sqrt())
            .collect()
    }

    /// Covariate vectors for each dataset row, in model order.
    pub fn design(&self, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
        dataset.matrix(&self.covariate_names)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardRatio {
    pub covariate: String,
    pub coefficient: f64,
    pub se: f64,
    pub hr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl HazardRatio {
    pub fn contains(&self, hr: f64) -> bool {
        self.ci_lo <= hr && hr <= self.ci_hi
    }

    pub fn overlaps(&self, other: &HazardRatio) -> bool {
        self.ci_lo <= other.ci_hi && other.ci_lo <= self.ci_hi
    }
}

pub fn hazard_ratios(model: &CoxModel) -> Result<Vec<HazardRatio>> {
    if !model.converged {
        return Err(Error::InvalidArgument(
            "hazard ratios need a converged model".into(),
        ));
    }
    Ok(model
        .covariate_names
        .iter()
        .zip(&model.coefficients)
        .zip(model.standard_errors())
        .map(|((name, &b), se)| HazardRatio {
            covariate: name.clone(),
            coefficient: b,
            se,
            hr: b.exp(),
            ci_lo: (b - Z_95 * se).exp(),
            ci_hi: (b + Z_95 * se).exp(),
        })
        .collect())
}

pub fn fit_coxph(dataset: &Dataset, covariates: &[String]) -> Result<CoxModel> {
    fit_coxph_with(dataset, covariates, &CoxOptions::default())
}

pub fn fit_coxph_with(
    dataset: &Dataset,
    covariates: &[String],
    options: &CoxOptions,
) -> Result<CoxModel> {
    let x = dataset.matrix(covariates)?;
    fit_cox(&dataset.durations(), &dataset.events(), &x, covariates, options)
}

/// Subjects grouped by distinct time, latest first.
struct TimeGroups {
    order: Vec<usize>,
    /// `(start, end)` ranges into `order`, one per distinct time.
    groups: Vec<(usize, usize)>,
}

impl TimeGroups {
    fn new(durations: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..durations.len()).collect();
        order.sort_by(|&a, &b| durations[b].total_cmp(&durations[a]).then(a.cmp(&b)));
        let mut groups = Vec::new();
        let mut start = 0;
        while start < order.len() {
            let t = durations[order[start]];
            let mut end = start + 1;
            while end < order.len() && durations[order[end]] == t {
                end += 1;
            }
            groups.push((start, end));
            start = end;
        }
        TimeGroups { order, groups }
    }
}

struct Evaluation {
    log_likelihood: f64,
    score: DVector<f64>,
    information: DMatrix<f64>,
}

fn evaluate(
    groups: &TimeGroups,
    events: &[bool],
    x: &[DVector<f64>],
    beta: &DVector<f64>,
    ties: TiesMethod,
) -> Evaluation {
    let p = beta.len();
    let mut ll = 0.0;
    let mut score = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);

    for &(start, end) in &groups.groups {
        let mut d = 0usize;
        let mut d0 = 0.0;
        let mut d1 = DVector::zeros(p);
        let mut d2 = DMatrix::zeros(p, p);
        for &i in &groups.order[start..end] {
            let eta = beta.dot(&x[i]);
            let r = eta.exp();
            s0 += r;
            s1.axpy(r, &x[i], 1.0);
            s2.ger(r, &x[i], &x[i], 1.0);
            if events[i] {
                d += 1;
                ll += eta;
                score += &x[i];
                d0 += r;
                d1.axpy(r, &x[i], 1.0);
                d2.ger(r, &x[i], &x[i], 1.0);
            }
        }
        if d == 0 {
            continue;
        }
        match ties {
            TiesMethod::Breslow => {
                let mean = &s1 / s0;
                ll -= d as f64 * s0.ln();
                score.axpy(-(d as f64), &mean, 1.0);
                info += (&s2 / s0 - &mean * mean.transpose()) * d as f64;
            }
            TiesMethod::Efron => {
                for l in 0..d {
                    let f = l as f64 / d as f64;
                    let a0 = s0 - f * d0;
                    let a1 = &s1 - &d1 * f;
                    let a2 = &s2 - &d2 * f;
                    let mean = &a1 / a0;
                    ll -= a0.ln();
                    score -= &mean;
                    info += &a2 / a0 - &mean * mean.transpose();
                }
            }
        }
    }
    Evaluation {
        log_likelihood: ll,
        score,
        information: info,
    }
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn cholesky(info: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let chol = info
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("information matrix is not positive definite".into()))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if !(lo > 1e-8 * hi) {
        return Err(Error::Singular(
            "information matrix is numerically rank deficient".into(),
        ));
    }
    Ok(chol)
}

/// Newton–Raphson on the partial log-likelihood with step halving.
/// Covariates are mean-centered internally; centering leaves β unchanged.
pub fn fit_cox(
    durations: &[f64],
    events: &[bool],
    x: &[Vec<f64>],
    names: &[String],
    options: &CoxOptions,
) -> Result<CoxModel> {
    let n = durations.len();
    if events.len() != n || x.len() != n {
        return Err(Error::Shape("durations, events and covariates differ in length".into()));
    }
    let p = names.len();
    if p == 0 {
        return Err(Error::InvalidArgument("no covariates".into()));
    }
    if let Some(r) = x.iter().find(|r| r.len() != p) {
        return Err(Error::Shape(format!("covariate row of width {} for {p} names", r.len())));
    }
    let n_events = events.iter().filter(|&&e| e).count();
    if n_events == 0 {
        return Err(Error::InvalidArgument("no events to fit".into()));
    }

    let means: Vec<f64> = (0..p)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let xc: Vec<DVector<f64>> = x
        .iter()
        .map(|r| DVector::from_iterator(p, r.iter().zip(&means).map(|(v, m)| v - m)))
        .collect();
    let groups = TimeGroups::new(durations);

    let mut beta = DVector::zeros(p);
    let mut eval = evaluate(&groups, events, &xc, &beta, options.ties);
    let mut iterations = 0;
    let mut converged = max_abs(&eval.score) < options.tolerance;

    while !converged && iterations < options.max_iterations {
        let delta = cholesky(&eval.information)?.solve(&eval.score);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let candidate = &beta + &delta * step;
            let e = evaluate(&groups, events, &xc, &candidate, options.ties);
            let slack = 1e-12 * eval.log_likelihood.abs().max(1.0);
            if e.log_likelihood.is_finite() && e.log_likelihood >= eval.log_likelihood - slack {
                accepted = Some((candidate, e));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((b, e)) => {
                beta = b;
                eval = e;
            }
            None => {
                return Err(Error::NotConverged {
                    iterations,
                    max_score: max_abs(&eval.score),
                })
            }
        }
        converged = max_abs(&eval.score) < options.tolerance;
    }
    if !converged {
        return Err(Error::NotConverged {
            iterations,
            max_score: max_abs(&eval.score),
        });
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numerical("non-finite coefficients".into()));
    }

    let covariance = cholesky(&eval.information)?.inverse();
    let covariance = (0..p)
        .map(|i| (0..p).map(|j| 0.5 * (covariance[(i, j)] + covariance[(j, i)])).collect())
        .collect();

    Ok(CoxModel {
        covariate_names: names.to_vec(),
        coefficients: beta.iter().copied().collect(),
        covariance,
        ties: options.ties,
        converged,
        iterations,
        log_likelihood: eval.log_likelihood,
    })
}

/// Breslow estimate of the cumulative baseline hazard at each distinct event
/// time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineHazard {
    pub event_times: Vec<f64>,
    pub cumulative_hazard: Vec<f64>,
}

impl BaselineHazard {
    /// Step evaluation: the value at the last event time `<= t`, zero before
    /// the first.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.event_times.partition_point(|&s| s <= t);
        if k == 0 {
            0.0
        } else {
            self.cumulative_hazard[k - 1]
        }
    }
}

pub fn breslow_baseline(model: &CoxModel, dataset: &Dataset) -> Result<BaselineHazard> {
    let x = model.design(dataset)?;
    let risks: Vec<f64> = x.iter().map(|r| model.linear_predictor(r).exp()).collect();
    Ok(breslow_from_parts(&dataset.durations(), &dataset.events(), &risks))
}

pub(crate) fn breslow_from_parts(durations: &[f64], events: &[bool], risks: &[f64]) -> BaselineHazard {
    let groups = TimeGroups::new(durations);
    let mut at_risk = 0.0;
    let mut increments = Vec::new();
    for &(start, end) in &groups.groups {
        let mut deaths = 0usize;
        for &i in &groups.order[start..end] {
            at_risk += risks[i];
            deaths += usize::from(events[i]);
        }
        if deaths > 0 {
            increments.push((durations[groups.order[start]], deaths as f64 / at_risk));
        }
    }
    increments.reverse();
    let mut cumulative = 0.0;
    let (event_times, cumulative_hazard) = increments
        .into_iter()
        .map(|(t, h)| {
            cumulative += h;
            (t, cumulative)
        })
        .unzip();
    BaselineHazard {
        event_times,
        cumulative_hazard,
    }
}

/// `S(t | x) = exp(-H0(t) · exp(βᵀx))`
pub fn predict_survival(model: &CoxModel, baseline: &BaselineHazard, x: &[f64], t: f64) -> f64 {
    (-baseline.at(t) * model.linear_predictor(x).exp()).exp()
}

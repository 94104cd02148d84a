//! Comparator generators: SMOTE minority-class interpolation and MICE
//! chained-equation imputation with ridge regression.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureKind};
use crate::error::{Error, Result};
use crate::generation::{mask_count, sample_source_rows, ConditionTemplate, Directive};
use crate::model::Mask;

pub const DEFAULT_NEIGHBOURS: usize = 5;

/// Generates `n_new` rows of the class `event == minority_value`, each on the
/// segment between a random class member and one of its `k` nearest class
/// neighbours. Distances use min-max normalized features.
pub fn smote<R: Rng>(
    dataset: &Dataset,
    minority_value: f64,
    k: usize,
    n_new: usize,
    rng: &mut R,
) -> Result<Dataset> {
    let schema = dataset.schema();
    let event = schema.event_index();
    let class: Vec<usize> = (0..dataset.n_rows())
        .filter(|&i| dataset.value(i, event) == minority_value)
        .collect();
    if k == 0 {
        return Err(Error::InvalidArgument("SMOTE needs k >= 1".into()));
    }
    if class.len() < k + 1 {
        return Err(Error::InvalidArgument(format!(
            "SMOTE with k={k} needs at least {} rows with event={minority_value}, found {}",
            k + 1,
            class.len()
        )));
    }

    let n_features = schema.len();
    let ranges: Vec<(f64, f64)> = (0..n_features)
        .map(|j| {
            let col = dataset.column(j);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        })
        .collect();
    let scaled = |i: usize| -> Vec<f64> {
        dataset
            .row(i)
            .iter()
            .zip(&ranges)
            .map(|(&x, &(lo, hi))| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 })
            .collect()
    };
    let points: Vec<Vec<f64>> = class.iter().map(|&i| scaled(i)).collect();

    let neighbours: Vec<Vec<usize>> = (0..class.len())
        .map(|a| {
            let mut d: Vec<(f64, usize)> = (0..class.len())
                .filter(|&b| b != a)
                .map(|b| {
                    let dist: f64 = points[a]
                        .iter()
                        .zip(&points[b])
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum();
                    (dist, b)
                })
                .collect();
            d.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            d.into_iter().take(k).map(|(_, b)| b).collect()
        })
        .collect();

    let mut values = Vec::with_capacity(n_new * n_features);
    for _ in 0..n_new {
        let a = rng.gen_range(0..class.len());
        let b = neighbours[a][rng.gen_range(0..k)];
        let u: f64 = rng.gen();
        values.extend(interpolate(dataset, class[a], class[b], u, minority_value));
    }
    Dataset::from_flat(schema.clone(), values)
}

fn interpolate(dataset: &Dataset, a: usize, b: usize, u: f64, event_value: f64) -> Vec<f64> {
    let schema = dataset.schema();
    let event = schema.event_index();
    dataset
        .row(a)
        .iter()
        .zip(dataset.row(b))
        .enumerate()
        .map(|(j, (&x, &y))| {
            if j == event {
                return event_value;
            }
            let v = x + u * (y - x);
            match schema.feature(j).kind {
                FeatureKind::Binary => v.round(),
                FeatureKind::Continuous => v.clamp(x.min(y), x.max(y)),
            }
        })
        .collect()
}

/// The smaller class by event value; ties go to the event class.
pub fn minority_class(dataset: &Dataset) -> f64 {
    let events = dataset.events().iter().filter(|&&e| e).count();
    if events * 2 <= dataset.n_rows() {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiceConfig {
    pub n_cycles: usize,
    pub ridge_lambda: f64,
    /// Seeds the order in which features are visited each cycle.
    pub seed: u64,
}

impl Default for MiceConfig {
    fn default() -> Self {
        MiceConfig {
            n_cycles: 10,
            ridge_lambda: 1e-3,
            seed: 0,
        }
    }
}

impl MiceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cycles < 1 {
            return Err(Error::InvalidArgument("MICE needs n_cycles >= 1".into()));
        }
        if !(self.ridge_lambda > 0.0 && self.ridge_lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ridge penalty must be positive, got {}",
                self.ridge_lambda
            )));
        }
        Ok(())
    }
}

/// Ridge fit with an unpenalized intercept: returns `(intercept, β)`.
fn ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    let n = x.len();
    let p = x[0].len();
    let mx: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let my = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, p, |i, j| x[i][j] - mx[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - my));
    let mut gram = xc.transpose() * &xc;
    for j in 0..p {
        gram[(j, j)] += lambda;
    }
    let beta = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical("ridge system is not positive definite".into()))?
        .solve(&(xc.transpose() * yc));
    let intercept = my - beta.iter().zip(&mx).map(|(b, m)| b * m).sum::<f64>();
    Ok((intercept, beta.iter().copied().collect()))
}

/// Chained-equation imputation of the cells hidden by `masks`.
pub fn mice_impute(dataset: &Dataset, masks: &[Mask], config: &MiceConfig) -> Result<Dataset> {
    config.validate()?;
    let n = dataset.n_rows();
    let p = dataset.n_features();
    if masks.len() != n {
        return Err(Error::Shape(format!("{} masks for {n} rows", masks.len())));
    }
    if let Some((i, _)) = masks.iter().enumerate().find(|(_, m)| m.len() != p) {
        return Err(Error::Shape(format!("mask {i} does not cover {p} features")));
    }
    if let Some(i) = masks.iter().position(|m| m.n_observed() == 0) {
        return Err(Error::InvalidArgument(format!("row {} has no observed feature", i + 1)));
    }
    let schema = dataset.schema();
    let mut observed_rows: Vec<Vec<usize>> = vec![Vec::new(); p];
    for (i, m) in masks.iter().enumerate() {
        for (j, rows) in observed_rows.iter_mut().enumerate() {
            if m.is_observed(j) {
                rows.push(i);
            }
        }
    }
    if let Some(j) = observed_rows.iter().position(|r| r.len() < 2) {
        return Err(Error::InvalidArgument(format!(
            "feature `{}` is observed in fewer than 2 rows",
            schema.feature(j).name
        )));
    }

    let mut x = dataset.to_rows();
    let mut bounds = Vec::with_capacity(p);
    for (j, rows) in observed_rows.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().map(|&i| x[i][j]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        bounds.push((
            vals.iter().copied().fold(f64::INFINITY, f64::min),
            vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ));
        for (i, m) in masks.iter().enumerate() {
            if !m.is_observed(j) {
                x[i][j] = mean;
            }
        }
    }

    let incomplete: Vec<usize> = (0..p).filter(|&j| observed_rows[j].len() < n).collect();
    let mut rng = crate::rng::stream(config.seed, &[0x3A1CE]);
    for _ in 0..config.n_cycles {
        let mut order = incomplete.clone();
        order.shuffle(&mut rng);
        for &j in &order {
            let others = |r: &Vec<f64>| -> Vec<f64> {
                r.iter().enumerate().filter(|&(c, _)| c != j).map(|(_, &v)| v).collect()
            };
            let design: Vec<Vec<f64>> = observed_rows[j].iter().map(|&i| others(&x[i])).collect();
            let target: Vec<f64> = observed_rows[j].iter().map(|&i| x[i][j]).collect();
            let (b0, beta) = ridge(&design, &target, config.ridge_lambda)?;
            let (lo, hi) = bounds[j];
            for i in 0..n {
                if masks[i].is_observed(j) {
                    continue;
                }
                let pred = b0 + beta.iter().zip(others(&x[i])).map(|(b, v)| b * v).sum::<f64>();
                if !pred.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite imputation for `{}`",
                        schema.feature(j).name
                    )));
                }
                x[i][j] = pred.clamp(lo, hi);
            }
        }
    }
    for j in (0..p).filter(|&j| schema.feature(j).kind == FeatureKind::Binary) {
        for i in 0..n {
            if !masks[i].is_observed(j) {
                x[i][j] = if x[i][j] >= 0.5 { 1.0 } else { 0.0 };
            }
        }
    }
    Dataset::from_rows(schema.clone(), x)
}

/// MICE used as a generator: `count` training rows (sampled as in
/// synthesis) each have `round(mask_ratio · N)` features hidden and are
/// imputed alongside the fully observed training rows.
pub fn mice_synthesize<R: Rng>(
    training: &Dataset,
    mask_ratio: f64,
    count: usize,
    config: &MiceConfig,
    rng: &mut R,
) -> Result<Dataset> {
    if training.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let p = training.n_features();
    let k = mask_count(mask_ratio, p)?;
    let picks = sample_source_rows(training.n_rows(), count, rng);
    let sampled = training.select(&picks);
    let stacked = training.concat(&sampled)?;
    let mut masks = vec![Mask::all_observed(p); training.n_rows()];
    for _ in 0..count {
        let hidden = rand::seq::index::sample(rng, p, k).into_vec();
        masks.push(Mask::hiding(p, &hidden));
    }
    let imputed = mice_impute(&stacked, &masks, config)?;
    let tail: Vec<usize> = (training.n_rows()..stacked.n_rows()).collect();
    Ok(imputed.select(&tail))
}

/// MICE used for conditional generation: `count` template rows (conditioned
/// features fixed or drawn uniformly, the rest missing) are imputed
/// alongside the fully observed training rows.
pub fn mice_augment<R: Rng>(
    training: &Dataset,
    template: &ConditionTemplate,
    count: usize,
    config: &MiceConfig,
    rng: &mut R,
) -> Result<Dataset> {
    let p = training.n_features();
    if template.directives().len() != p {
        return Err(Error::Shape("template does not match the training schema".into()));
    }
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        rows.push(
            template
                .directives()
                .iter()
                .map(|d| match *d {
                    Directive::Fixed(v) => v,
                    Directive::Range([lo, hi]) if lo < hi => rng.gen_range(lo..=hi),
                    Directive::Range([lo, _]) => lo,
                    Directive::Masked => 0.0,
                })
                .collect(),
        );
    }
    let generated = Dataset::from_rows(training.schema().clone(), rows)?;
    let stacked = training.concat(&generated)?;
    let template_mask = Mask::new(
        template
            .directives()
            .iter()
            .map(|d| !matches!(d, Directive::Masked))
            .collect(),
    );
    let mut masks = vec![Mask::all_observed(p); training.n_rows()];
    masks.extend(std::iter::repeat_n(template_mask, count));
    let imputed = mice_impute(&stacked, &masks, config)?;
    let tail: Vec<usize> = (training.n_rows()..stacked.n_rows()).collect();
    Ok(imputed.select(&tail))
}

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::grad::gradients_with_loss;
use super::{Mask, MaskSampler, McmModel};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScope {
    /// Squared error averaged over every feature of the row.
    #[default]
    AllFeatures,
    /// Squared error averaged over the masked features only.
    MaskedOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub moment_decays: (f64, f64),
    pub epsilon: f64,
    pub mask_prob_range: (f64, f64),
    pub seed: u64,
    pub loss_scope: LossScope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 64,
            step_size: 1e-3,
            moment_decays: (0.9, 0.999),
            epsilon: 1e-8,
            mask_prob_range: (0.15, 0.85),
            seed: 0,
            loss_scope: LossScope::AllFeatures,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return bad(format!("step_size must be positive, got {}", self.step_size));
        }
        let (b1, b2) = self.moment_decays;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad(format!("moment decays must lie in [0, 1), got ({b1}, {b2})"));
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive".into());
        }
        MaskSampler::new(self.mask_prob_range)?;
        Ok(())
    }
}

/// First/second moment adaptive step state.
#[derive(Debug, Clone)]
pub struct Adam {
    step_size: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &McmModel, config: &TrainConfig) -> Self {
        let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
        Adam {
            step_size: config.step_size,
            beta1: config.moment_decays.0,
            beta2: config.moment_decays.1,
            epsilon: config.epsilon,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: [&mut [f64]; 5], grads: [&[f64]; 5]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.step_size * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Trains on normalized rows with fresh random masks every epoch and returns
/// the trained model with its per-epoch mean loss.
pub fn train(
    model: McmModel,
    v_matrix: &[Vec<f64>],
    config: &TrainConfig,
) -> Result<(McmModel, Vec<f64>)> {
    config.validate()?;
    let n = v_matrix.len();
    if n < config.batch_size {
        return Err(Error::InvalidArgument(format!(
            "{n} training rows is fewer than the batch size {}",
            config.batch_size
        )));
    }
    if let Some(r) = v_matrix.iter().find(|r| r.len() != model.feature_count) {
        return Err(Error::Shape(format!(
            "training row has {} values, model expects {}",
            r.len(),
            model.feature_count
        )));
    }

    let sampler = MaskSampler::new(config.mask_prob_range)?;
    let mut rng = rng::stream(config.seed, &[0x7EA1]);
    let mut model = model;
    let mut opt = Adam::new(&model, config);
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let masks: Vec<Mask> = order
            .iter()
            .map(|_| sampler.sample(model.feature_count, &mut rng))
            .collect();
        let mut epoch_loss = 0.0;
        for (chunk_idx, masks_chunk) in order
            .chunks(config.batch_size)
            .zip(masks.chunks(config.batch_size))
        {
            let batch: Vec<(Vec<f64>, Mask)> = chunk_idx
                .iter()
                .zip(masks_chunk)
                .map(|(&i, m)| (v_matrix[i].clone(), m.clone()))
                .collect();
            let (g, batch_loss) = gradients_with_loss(&model, &batch, config.loss_scope)?;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: batch_loss,
                });
            }
            epoch_loss += batch_loss * batch.len() as f64;
            opt.step(model.params_mut(), g.slices());
        }
        let mean = epoch_loss / n as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        history.push(mean);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_rows(n: usize) -> Vec<Vec<f64>> {
        // Three correlated features plus an independent one.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..n)
            .map(|_| {
                let z: f64 = rng.gen();
                vec![z, 1.0 - z, 0.5 * z + 0.25, rng.gen()]
            })
            .collect()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            step_size: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            mask_prob_range: (0.9, 0.1),
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let rows = toy_rows(128);
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 16,
            step_size: 1e-2,
            seed: 3,
            ..Default::default()
        };
        let m0 = McmModel::init(4, 16, 1).unwrap();
        let (m1, h1) = train(m0.clone(), &rows, &cfg).unwrap();
        let (m2, h2) = train(m0, &rows, &cfg).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        assert_eq!(h1.len(), 60);
        assert!(h1.last().unwrap() < &h1[0]);
    }

    #[test]
    fn batch_larger_than_data_is_rejected() {
        let rows = toy_rows(10);
        let m = McmModel::init(4, 4, 1).unwrap();
        assert!(train(m, &rows, &TrainConfig::default()).is_err());
    }
}

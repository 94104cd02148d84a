use super::{loss, Mask, Matrix, McmModel};
use crate::error::{Error, Result};
use crate::model::train::LossScope;

/// Gradient of the mean batch loss, shaped like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub attention: Matrix,
    pub u1: Matrix,
    pub b1: Vec<f64>,
    pub u2: Matrix,
    pub b2: Vec<f64>,
}

impl Gradients {
    fn zeros_like(m: &McmModel) -> Self {
        Gradients {
            attention: Matrix::zeros(m.feature_count, m.feature_count),
            u1: Matrix::zeros(m.hidden, m.feature_count),
            b1: vec![0.0; m.hidden],
            u2: Matrix::zeros(m.feature_count, m.hidden),
            b2: vec![0.0; m.feature_count],
        }
    }

    /// Same order as the model's parameter blocks: W, U1, b1, U2, b2.
    pub fn slices(&self) -> [&[f64]; 5] {
        [
            self.attention.as_slice(),
            self.u1.as_slice(),
            &self.b1,
            self.u2.as_slice(),
            &self.b2,
        ]
    }

    fn scale(&mut self, s: f64) {
        for m in [&mut self.attention, &mut self.u1, &mut self.u2] {
            for g in m.as_mut_slice() {
                *g *= s;
            }
        }
        for g in self.b1.iter_mut().chain(self.b2.iter_mut()) {
            *g *= s;
        }
    }
}

/// Analytic gradient of the mean all-feature loss over `batch`.
pub fn gradients(model: &McmModel, batch: &[(Vec<f64>, Mask)]) -> Result<Gradients> {
    Ok(gradients_with_loss(model, batch, LossScope::AllFeatures)?.0)
}

/// Returns the gradient together with the mean batch loss.
pub fn gradients_with_loss(
    model: &McmModel,
    batch: &[(Vec<f64>, Mask)],
    scope: LossScope,
) -> Result<(Gradients, f64)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut g = Gradients::zeros_like(model);
    let mut total_loss = 0.0;
    for (v, mask) in batch {
        total_loss += accumulate(model, v, mask, scope, &mut g)?;
    }
    let inv = 1.0 / batch.len() as f64;
    g.scale(inv);
    Ok((g, total_loss * inv))
}

pub(crate) fn sample_loss(v_hat: &[f64], v: &[f64], mask: &Mask, scope: LossScope) -> Result<f64> {
    match scope {
        LossScope::AllFeatures => loss(v_hat, v),
        LossScope::MaskedOnly => {
            let k = mask.n_masked();
            if k == 0 {
                return Ok(0.0);
            }
            Ok((0..v.len())
                .filter(|&i| !mask.is_observed(i))
                .map(|i| (v_hat[i] - v[i]).powi(2))
                .sum::<f64>()
                / k as f64)
        }
    }
}

/// Backpropagates one sample and adds its (unscaled) gradient into `g`.
fn accumulate(
    model: &McmModel,
    v: &[f64],
    mask: &Mask,
    scope: LossScope,
    g: &mut Gradients,
) -> Result<f64> {
    let t = model.trace(v, mask)?;
    let n = model.feature_count;
    let l = sample_loss(&t.output, v, mask, scope)?;

    // dL/dŷ
    let weight = match scope {
        LossScope::AllFeatures => 2.0 / n as f64,
        LossScope::MaskedOnly => 2.0 / mask.n_masked().max(1) as f64,
    };
    let d_out_pre: Vec<f64> = (0..n)
        .map(|i| {
            let counted = scope == LossScope::AllFeatures || !mask.is_observed(i);
            if counted {
                let y = t.output[i];
                weight * (y - v[i]) * y * (1.0 - y)
            } else {
                0.0
            }
        })
        .collect();

    g.u2.add_outer(&d_out_pre, &t.hidden, 1.0);
    for (gb, d) in g.b2.iter_mut().zip(&d_out_pre) {
        *gb += d;
    }

    let d_hidden = model.u2.tr_mul_vec(&d_out_pre);
    let d_hidden_pre: Vec<f64> = d_hidden
        .iter()
        .zip(&t.hidden_pre)
        .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
        .collect();
    g.u1.add_outer(&d_hidden_pre, &t.attended, 1.0);
    for (gb, d) in g.b1.iter_mut().zip(&d_hidden_pre) {
        *gb += d;
    }

    // Through u = a ⊙ x̄ and the softmax restricted to observed positions.
    let d_attended = model.u1.tr_mul_vec(&d_hidden_pre);
    let d_attn: Vec<f64> = d_attended
        .iter()
        .zip(&t.masked_input)
        .map(|(d, x)| d * x)
        .collect();
    let inner: f64 = t.attention.iter().zip(&d_attn).map(|(a, d)| a * d).sum();
    let d_logits: Vec<f64> = (0..n)
        .map(|i| {
            if mask.is_observed(i) {
                t.attention[i] * (d_attn[i] - inner)
            } else {
                0.0
            }
        })
        .collect();
    g.attention.add_outer(&d_logits, &t.masked_input, 1.0);
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mean_loss(model: &McmModel, batch: &[(Vec<f64>, Mask)], scope: LossScope) -> f64 {
        batch
            .iter()
            .map(|(v, m)| {
                let (_, out) = model.forward(v, m).unwrap();
                sample_loss(&out, v, m, scope).unwrap()
            })
            .sum::<f64>()
            / batch.len() as f64
    }

    #[test]
    fn duplicated_batch_gives_identical_gradient() {
        let m = McmModel::init(5, 4, 3).unwrap();
        let sample = (vec![0.1, 0.9, 0.4, 0.3, 0.7], Mask::hiding(5, &[1, 3]));
        let one = gradients(&m, &[sample.clone()]).unwrap();
        let two = gradients(&m, &[sample.clone(), sample]).unwrap();
        for (a, b) in one.slices().iter().zip(two.slices()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_residual_gives_zero_output_bias_gradient() {
        // With all weights zero the output is 0.5 everywhere.
        let m = McmModel::zeros(4, 3);
        let v = vec![0.5; 4];
        let g = gradients(&m, &[(v, Mask::hiding(4, &[2]))]).unwrap();
        assert!(g.b2.iter().all(|&x| x == 0.0));
        assert!(g.u2.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let m = McmModel::zeros(3, 2);
        assert!(gradients(&m, &[]).is_err());
    }

    #[test]
    fn masked_only_scope_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = McmModel::init(4, 6, 2).unwrap();
        let batch: Vec<(Vec<f64>, Mask)> = (0..3)
            .map(|_| {
                let v: Vec<f64> = (0..4).map(|_| rng.gen()).collect();
                (v, Mask::hiding(4, &[rng.gen_range(0..4)]))
            })
            .collect();
        let (g, _) = gradients_with_loss(&model, &batch, LossScope::MaskedOnly).unwrap();
        let h = 1e-6;
        for (block, grads) in g.slices().iter().enumerate() {
            for (k, &analytic) in grads.iter().enumerate() {
                let mut plus = model.clone();
                plus.params_mut()[block][k] += h;
                let mut minus = model.clone();
                minus.params_mut()[block][k] -= h;
                let fd = (mean_loss(&plus, &batch, LossScope::MaskedOnly)
                    - mean_loss(&minus, &batch, LossScope::MaskedOnly))
                    / (2.0 * h);
                assert!((analytic - fd).abs() < 1e-6, "block {block} idx {k}: {analytic} vs {fd}");
            }
        }
    }
}

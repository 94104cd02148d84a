//! The masked reconstruction network.
//!
//! A row `v` in [0,1]^N and an observation mask go through a masked attention
//! filter, `a = softmax(W (m ⊙ v))` restricted to observed positions, and the
//! attended input `a ⊙ v` through a two-layer perceptron with a ReLU hidden
//! layer and a sigmoid output. Masked features therefore get zero attention
//! and the attention over observed features sums to one.

mod grad;
mod io;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grad::{gradients, Gradients};
pub use io::{load_model, save_model, ModelFile, MODEL_VERSION};
pub use train::{train, Adam, LossScope, TrainConfig};

pub const DEFAULT_HIDDEN: usize = 64;

/// Dense row-major matrix, serialized as a list of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self · x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks(self.cols)
            .map(|row| row.iter().zip(x).map(|(w, x)| w * x).sum())
            .collect()
    }

    /// `selfᵀ · y`
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &yi) in self.data.chunks(self.cols).zip(y) {
            if yi != 0.0 {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += w * yi;
                }
            }
        }
        out
    }

    /// `self += scale · u vᵀ`
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], scale: f64) {
        for (row, &ui) in self.data.chunks_mut(self.cols).zip(u) {
            let s = scale * ui;
            if s != 0.0 {
                for (w, &vj) in row.iter_mut().zip(v) {
                    *w += s * vj;
                }
            }
        }
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = String;

    fn try_from(rows: Vec<Vec<f64>>) -> std::result::Result<Self, String> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err("ragged matrix".into());
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.data.chunks(m.cols.max(1)).take(m.rows).map(<[f64]>::to_vec).collect()
    }
}

/// Which features of a row are visible to the model.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    observed: Vec<bool>,
}

impl Mask {
    pub fn new(observed: Vec<bool>) -> Self {
        Mask { observed }
    }

    pub fn all_observed(n: usize) -> Self {
        Mask::new(vec![true; n])
    }

    /// All observed except the listed positions.
    pub fn hiding(n: usize, masked: &[usize]) -> Self {
        let mut observed = vec![true; n];
        for &i in masked {
            observed[i] = false;
        }
        Mask { observed }
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn is_observed(&self, i: usize) -> bool {
        self.observed[i]
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn n_masked(&self) -> usize {
        self.len() - self.n_observed()
    }
}

/// Draws masks with a per-row masking probability `p ~ U(lo, hi)`; every
/// feature is hidden independently with probability `p`, redrawing until at
/// least one feature is observed and at least one is masked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSampler {
    pub prob_range: (f64, f64),
}

impl MaskSampler {
    pub fn new(prob_range: (f64, f64)) -> Result<Self> {
        let (lo, hi) = prob_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mask probability range ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 1"
            )));
        }
        Ok(MaskSampler { prob_range })
    }

    pub fn sample<R: Rng + ?Sized>(&self, n_features: usize, rng: &mut R) -> Mask {
        assert!(n_features >= 2, "masking needs at least two features");
        let (lo, hi) = self.prob_range;
        let p = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        // Degenerate probabilities would never yield an interior mask.
        let p = p.clamp(1e-3, 1.0 - 1e-3);
        loop {
            let observed: Vec<bool> = (0..n_features).map(|_| rng.gen::<f64>() >= p).collect();
            let k = observed.iter().filter(|&&o| o).count();
            if k >= 1 && k < n_features {
                return Mask { observed };
            }
        }
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input with masked entries zeroed.
    pub masked_input: Vec<f64>,
    pub attention: Vec<f64>,
    /// `a ⊙ v`
    pub attended: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmModel {
    pub feature_count: usize,
    pub hidden: usize,
    /// Attention logits layer, N×N.
    pub attention: Matrix,
    /// Hidden layer, H×N.
    pub u1: Matrix,
    pub b1: Vec<f64>,
    /// Output layer, N×H.
    pub u2: Matrix,
    pub b2: Vec<f64>,
}

/// Logistic function kept strictly inside (0, 1) even where f64 would round
/// to an endpoint.
fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

impl McmModel {
    /// Uniform `±1/√fan_in` weights, zero biases.
    pub fn init(n_features: usize, hidden: usize, seed: u64) -> Result<Self> {
        if n_features < 2 {
            return Err(Error::InvalidArgument(format!(
                "the model needs at least 2 features to mask, got {n_features}"
            )));
        }
        if hidden < 1 {
            return Err(Error::InvalidArgument("hidden width must be >= 1".into()));
        }
        let mut rng = crate::rng::stream(seed, &[0x1417]);
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            let mut m = Matrix::zeros(rows, cols);
            for w in m.as_mut_slice() {
                *w = rng.gen_range(-bound..bound);
            }
            m
        };
        let attention = uniform(n_features, n_features);
        let u1 = uniform(hidden, n_features);
        let u2 = uniform(n_features, hidden);
        Ok(McmModel {
            feature_count: n_features,
            hidden,
            attention,
            u1,
            b1: vec![0.0; hidden],
            u2,
            b2: vec![0.0; n_features],
        })
    }

    pub fn zeros(n_features: usize, hidden: usize) -> Self {
        McmModel {
            feature_count: n_features,
            hidden,
            attention: Matrix::zeros(n_features, n_features),
            u1: Matrix::zeros(hidden, n_features),
            b1: vec![0.0; hidden],
            u2: Matrix::zeros(n_features, hidden),
            b2: vec![0.0; n_features],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|w| w.is_finite()))
    }

    pub(crate) fn params(&self) -> [&[f64]; 5] {
        [
            self.attention.as_slice(),
            self.u1.as_slice(),
            &self.b1,
            self.u2.as_slice(),
            &self.b2,
        ]
    }

    pub(crate) fn params_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.attention.as_mut_slice(),
            self.u1.as_mut_slice(),
            &mut self.b1,
            self.u2.as_mut_slice(),
            &mut self.b2,
        ]
    }

    fn check_input(&self, v: &[f64], mask: &Mask) -> Result<()> {
        if v.len() != self.feature_count || mask.len() != self.feature_count {
            return Err(Error::Shape(format!(
                "model has {} features, input has {} values and mask {}",
                self.feature_count,
                v.len(),
                mask.len()
            )));
        }
        if mask.n_observed() == 0 {
            return Err(Error::InvalidArgument(
                "at least one feature must be observed".into(),
            ));
        }
        Ok(())
    }

    pub fn attention(&self, v: &[f64], mask: &Mask) -> Result<Vec<f64>> {
        self.check_input(v, mask)?;
        let masked: Vec<f64> = zero_masked(v, mask);
        Ok(self.attention_from(&masked, mask))
    }

    fn attention_from(&self, masked_input: &[f64], mask: &Mask) -> Vec<f64> {
        let logits = self.attention.mul_vec(masked_input);
        let max = logits
            .iter()
            .zip(mask.observed())
            .filter(|(_, &o)| o)
            .map(|(&z, _)| z)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut a: Vec<f64> = logits
            .iter()
            .zip(mask.observed())
            .map(|(&z, &o)| if o { (z - max).exp() } else { 0.0 })
            .collect();
        let total: f64 = a.iter().sum();
        for x in &mut a {
            *x /= total;
        }
        a
    }

    pub fn trace(&self, v: &[f64], mask: &Mask) -> Result<ForwardTrace> {
        self.check_input(v, mask)?;
        let masked_input = zero_masked(v, mask);
        let attention = self.attention_from(&masked_input, mask);
        let attended: Vec<f64> = attention
            .iter()
            .zip(&masked_input)
            .map(|(a, x)| a * x)
            .collect();
        let hidden_pre: Vec<f64> = self
            .u1
            .mul_vec(&attended)
            .iter()
            .zip(&self.b1)
            .map(|(z, b)| z + b)
            .collect();
        let hidden: Vec<f64> = hidden_pre.iter().map(|&z| z.max(0.0)).collect();
        let output: Vec<f64> = self
            .u2
            .mul_vec(&hidden)
            .iter()
            .zip(&self.b2)
            .map(|(z, b)| sigmoid(z + b))
            .collect();
        Ok(ForwardTrace {
            masked_input,
            attention,
            attended,
            hidden_pre,
            hidden,
            output,
        })
    }

    /// Returns the attention vector and the reconstruction.
    pub fn forward(&self, v: &[f64], mask: &Mask) -> Result<(Vec<f64>, Vec<f64>)> {
        let t = self.trace(v, mask)?;
        Ok((t.attention, t.output))
    }

    /// Fills masked positions with the reconstruction; observed positions are
    /// copied from the input.
    pub fn complete(&self, v: &[f64], mask: &Mask) -> Result<Vec<f64>> {
        let (_, v_hat) = self.forward(v, mask)?;
        Ok(v.iter()
            .zip(&v_hat)
            .zip(mask.observed())
            .map(|((&x, &y), &o)| if o { x } else { y })
            .collect())
    }
}

fn zero_masked(v: &[f64], mask: &Mask) -> Vec<f64> {
    v.iter()
        .zip(mask.observed())
        .map(|(&x, &o)| if o { x } else { 0.0 })
        .collect()
}

/// Mean squared error over all components.
pub fn loss(v_hat: &[f64], v: &[f64]) -> Result<f64> {
    if v_hat.len() != v.len() || v.is_empty() {
        return Err(Error::Shape(format!(
            "loss over vectors of length {} and {}",
            v_hat.len(),
            v.len()
        )));
    }
    Ok(v_hat.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / v.len() as f64)
}

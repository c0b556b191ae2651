//! Trainable surrogate models: multinomial logistic regression and an
//! optional one-hidden-layer tanh network, both with hand-written gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::data::Sample;

/// Flat weight vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelParams {
    pub weights: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
        }
    }

    pub fn dimension(&self) -> usize {
        self.weights.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }
}

impl From<Vec<f64>> for ModelParams {
    fn from(weights: Vec<f64>) -> Self {
        Self { weights }
    }
}

/// A per-sample differentiable loss over flat parameters.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    /// Adds the gradient of the per-sample loss at `w` into `grad`.
    fn accumulate_gradient(&self, w: &[f64], sample: &Sample, grad: &mut [f64]);

    fn loss(&self, w: &[f64], sample: &Sample) -> f64;

    fn predict(&self, w: &[f64], features: &[f64]) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_classes: usize,
    pub feature_dim: usize,
    /// `None` (or 0) selects plain logistic regression.
    pub hidden_units: Option<usize>,
}

/// Surrogate classifier chosen by [`Architecture`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Classifier {
    Logistic(Logistic),
    Mlp(Mlp),
}

impl Classifier {
    pub fn new(arch: Architecture) -> Self {
        match arch.hidden_units {
            Some(h) if h > 0 => Classifier::Mlp(Mlp {
                n_classes: arch.n_classes,
                feature_dim: arch.feature_dim,
                hidden: h,
            }),
            _ => Classifier::Logistic(Logistic {
                n_classes: arch.n_classes,
                feature_dim: arch.feature_dim,
            }),
        }
    }

    /// Zeros for logistic regression; small Gaussian weights for the MLP
    /// (zero init would leave hidden units symmetric).
    pub fn init_params(&self, seed: u64) -> ModelParams {
        match self {
            Classifier::Logistic(m) => ModelParams::zeros(m.dim()),
            Classifier::Mlp(m) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let scale = 1.0 / (m.feature_dim as f64).sqrt();
                let mut w = vec![0.0; m.dim()];
                for (i, v) in w.iter_mut().enumerate() {
                    if !m.is_bias(i) {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v = scale * z;
                    }
                }
                ModelParams::from(w)
            }
        }
    }
}

impl Objective for Classifier {
    fn dim(&self) -> usize {
        match self {
            Classifier::Logistic(m) => m.dim(),
            Classifier::Mlp(m) => m.dim(),
        }
    }

    fn accumulate_gradient(&self, w: &[f64], sample: &Sample, grad: &mut [f64]) {
        match self {
            Classifier::Logistic(m) => m.accumulate_gradient(w, sample, grad),
            Classifier::Mlp(m) => m.accumulate_gradient(w, sample, grad),
        }
    }

    fn loss(&self, w: &[f64], sample: &Sample) -> f64 {
        match self {
            Classifier::Logistic(m) => m.loss(w, sample),
            Classifier::Mlp(m) => m.loss(w, sample),
        }
    }

    fn predict(&self, w: &[f64], features: &[f64]) -> usize {
        match self {
            Classifier::Logistic(m) => m.predict(w, features),
            Classifier::Mlp(m) => m.predict(w, features),
        }
    }
}

/// In-place softmax; returns log-sum-exp of the input.
fn softmax(z: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

/// First index of the maximum.
fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// Layout: `n_classes x feature_dim` weights (row-major) then `n_classes` biases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Logistic {
    pub n_classes: usize,
    pub feature_dim: usize,
}

impl Logistic {
    fn logits(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        let d = self.feature_dim;
        let bias = &w[self.n_classes * d..];
        for (c, o) in out.iter_mut().enumerate() {
            let row = &w[c * d..(c + 1) * d];
            *o = bias[c] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

impl Objective for Logistic {
    fn dim(&self) -> usize {
        self.n_classes * self.feature_dim + self.n_classes
    }

    fn accumulate_gradient(&self, w: &[f64], sample: &Sample, grad: &mut [f64]) {
        let d = self.feature_dim;
        let mut p = vec![0.0; self.n_classes];
        self.logits(w, &sample.features, &mut p);
        softmax(&mut p);
        let bias_off = self.n_classes * d;
        for (c, &pc) in p.iter().enumerate() {
            let delta = pc - if c == sample.label { 1.0 } else { 0.0 };
            for (g, x) in grad[c * d..(c + 1) * d].iter_mut().zip(&sample.features) {
                *g += delta * x;
            }
            grad[bias_off + c] += delta;
        }
    }

    fn loss(&self, w: &[f64], sample: &Sample) -> f64 {
        let mut z = vec![0.0; self.n_classes];
        self.logits(w, &sample.features, &mut z);
        let target = z[sample.label];
        softmax(&mut z) - target
    }

    fn predict(&self, w: &[f64], features: &[f64]) -> usize {
        let mut z = vec![0.0; self.n_classes];
        self.logits(w, features, &mut z);
        argmax(&z)
    }
}

/// One tanh hidden layer. Layout: `W1 (hidden x dim)`, `b1 (hidden)`,
/// `W2 (classes x hidden)`, `b2 (classes)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mlp {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub hidden: usize,
}

impl Mlp {
    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.hidden * self.feature_dim;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.n_classes * self.hidden;
        (w1, b1, w2)
    }

    fn is_bias(&self, i: usize) -> bool {
        let (w1_end, b1_end, w2_end) = self.offsets();
        (w1_end..b1_end).contains(&i) || i >= w2_end
    }

    fn forward(&self, w: &[f64], x: &[f64], h: &mut [f64], z: &mut [f64]) {
        let d = self.feature_dim;
        let (w1_end, b1_end, w2_end) = self.offsets();
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &w[j * d..(j + 1) * d];
            let a = w[w1_end + j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            *hj = a.tanh();
        }
        for (c, zc) in z.iter_mut().enumerate() {
            let row = &w[b1_end + c * self.hidden..b1_end + (c + 1) * self.hidden];
            *zc = w[w2_end + c] + row.iter().zip(h.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

impl Objective for Mlp {
    fn dim(&self) -> usize {
        self.hidden * self.feature_dim + self.hidden + self.n_classes * self.hidden + self.n_classes
    }

    fn accumulate_gradient(&self, w: &[f64], sample: &Sample, grad: &mut [f64]) {
        let d = self.feature_dim;
        let (w1_end, b1_end, w2_end) = self.offsets();
        let mut h = vec![0.0; self.hidden];
        let mut p = vec![0.0; self.n_classes];
        self.forward(w, &sample.features, &mut h, &mut p);
        softmax(&mut p);
        let mut back = vec![0.0; self.hidden];
        for (c, &pc) in p.iter().enumerate() {
            let delta = pc - if c == sample.label { 1.0 } else { 0.0 };
            let row = b1_end + c * self.hidden;
            for j in 0..self.hidden {
                grad[row + j] += delta * h[j];
                back[j] += delta * w[row + j];
            }
            grad[w2_end + c] += delta;
        }
        for j in 0..self.hidden {
            let dj = back[j] * (1.0 - h[j] * h[j]);
            for (g, x) in grad[j * d..(j + 1) * d].iter_mut().zip(&sample.features) {
                *g += dj * x;
            }
            grad[w1_end + j] += dj;
        }
    }

    fn loss(&self, w: &[f64], sample: &Sample) -> f64 {
        let mut h = vec![0.0; self.hidden];
        let mut z = vec![0.0; self.n_classes];
        self.forward(w, &sample.features, &mut h, &mut z);
        let target = z[sample.label];
        softmax(&mut z) - target
    }

    fn predict(&self, w: &[f64], features: &[f64]) -> usize {
        let mut h = vec![0.0; self.hidden];
        let mut z = vec![0.0; self.n_classes];
        self.forward(w, features, &mut h, &mut z);
        argmax(&z)
    }
}

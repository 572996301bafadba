//! Small dense-network building blocks shared by the evidence networks and
//! the branch classifiers: affine layers, layer normalization, activations,
//! and an Adam optimizer over any [`ParamSet`].

use rand::Rng;

use crate::error::{check_len, Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Probabilities are kept inside `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Affine map `y = W x + b` with `W` stored row-major as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("dense input", self.in_dim, x.len())?;
        Ok(self
            .weight
            .chunks_exact(self.in_dim.max(1))
            .take(self.out_dim)
            .zip(&self.bias)
            .map(|(row, b)| dot(row, x) + b)
            .collect())
    }

    /// Accumulates `dL/dW`, `dL/db` into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = o * self.in_dim;
            for i in 0..self.in_dim {
                grad.weight[row + i] += g * x[i];
                dx[i] += g * self.weight[row + i];
            }
        }
        dx
    }
}

/// Per-sample normalization over the feature axis with learned gain and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub shift: Vec<f64>,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: f64,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gain: vec![1.0; width],
            shift: vec![0.0; width],
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            gain: vec![0.0; self.gain.len()],
            shift: vec![0.0; self.shift.len()],
            eps: self.eps,
        }
    }

    pub fn width(&self) -> usize {
        self.gain.len()
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, LayerNormCache) {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + self.eps).sqrt();
        let normalized: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
        let y = normalized
            .iter()
            .zip(self.gain.iter().zip(&self.shift))
            .map(|(h, (g, s))| g * h + s)
            .collect();
        (
            y,
            LayerNormCache {
                normalized,
                inv_std,
            },
        )
    }

    /// Accumulates gain/shift gradients and returns `dL/dx`, including the
    /// paths through the mean and variance.
    pub fn backward(&self, cache: &LayerNormCache, dy: &[f64], grad: &mut LayerNorm) -> Vec<f64> {
        let n = dy.len() as f64;
        let mut dh = Vec::with_capacity(dy.len());
        for (i, &g) in dy.iter().enumerate() {
            grad.gain[i] += g * cache.normalized[i];
            grad.shift[i] += g;
            dh.push(g * self.gain[i]);
        }
        let mean_dh = dh.iter().sum::<f64>() / n;
        let mean_dh_h = dot(&dh, &cache.normalized) / n;
        dh.iter()
            .zip(&cache.normalized)
            .map(|(d, h)| cache.inv_std * (d - mean_dh - h * mean_dh_h))
            .collect()
    }
}

/// A model whose parameters are a fixed list of flat tensors.
///
/// The same type doubles as its own gradient container.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    /// Which tensors receive decoupled weight decay (dense weights only).
    fn decay_mask(&self) -> Vec<bool>;
    /// Logical shape of each tensor, used by the parameter file format.
    fn shapes(&self) -> Vec<Vec<usize>>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += factor * other`, tensor by tensor.
    fn add_scaled(&mut self, other: &Self, factor: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += factor * s;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators for [`adam_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn for_params<P: ParamSet>(params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update with decoupled weight decay on the
/// tensors flagged by [`ParamSet::decay_mask`].
pub fn adam_step<P: ParamSet>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    let mask = params.decay_mask();
    let grads = grads.tensors();
    check_len("adam gradient tensors", mask.len(), grads.len())?;
    check_len("adam first moments", mask.len(), state.first.len())?;
    check_len("adam second moments", mask.len(), state.second.len())?;
    {
        let tensors = params.tensors();
        for (i, t) in tensors.iter().enumerate() {
            if grads[i].len() != t.len()
                || state.first[i].len() != t.len()
                || state.second[i].len() != t.len()
            {
                return Err(Error::Shape {
                    context: "adam tensor",
                    expected: t.len(),
                    got: grads[i].len(),
                });
            }
        }
    }

    state.step += 1;
    let step = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(step);
    let c2 = 1.0 - config.beta2.powi(step);
    let lr = config.learning_rate;
    let decay = lr * config.weight_decay;

    for (i, theta) in params.tensors_mut().into_iter().enumerate() {
        let g = grads[i];
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for j in 0..theta.len() {
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            let mut update = lr * m_hat / (v_hat.sqrt() + config.eps);
            if mask[i] {
                update += decay * theta[j];
            }
            theta[j] -= update;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
}

impl TrainingLog {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs
            .iter()
            .find(|e| e.epoch == self.best_epoch)
            .map_or(f64::INFINITY, |e| e.val_loss)
    }
}

//! Evidence networks: dense regressors that score how far a branch's
//! prediction on a given sample can be trusted.
//!
//! Architecture: three blocks of `ReLU(LayerNorm(Dense(x)))` followed by a
//! scalar logistic head. Trained with Adam against a mean-absolute-error loss
//! on binary correctness targets.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::nn::{
    adam_step, clamp_probability, dot, logistic, AdamConfig, AdamState, Dense, EpochLog,
    LayerNorm, LayerNormCache, ParamSet, TrainingLog,
};
use crate::persist::TensorBlock;

pub const NUM_BLOCKS: usize = 3;
pub const DEFAULT_HIDDEN: usize = 32;
pub const BLOCK_KIND: &str = "evidence-net";

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceBlock {
    pub dense: Dense,
    pub norm: LayerNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceNetParams {
    pub blocks: Vec<EvidenceBlock>,
    pub head_weight: Vec<f64>,
    pub head_bias: f64,
}

impl EvidenceNetParams {
    /// Seeded initialization: dense weights uniform in `±1/sqrt(fan_in)`,
    /// biases zero, norm gains one and shifts zero.
    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..NUM_BLOCKS)
            .map(|i| EvidenceBlock {
                dense: Dense::init(if i == 0 { input_dim } else { hidden }, hidden, &mut rng),
                norm: LayerNorm::new(hidden),
            })
            .collect();
        let head = Dense::init(hidden, 1, &mut rng);
        Self {
            blocks,
            head_weight: head.weight,
            head_bias: 0.0,
        }
    }

    /// All parameters zero, norm gains included.
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let mut p = Self::init(input_dim, hidden, 0);
        for t in p.tensors_mut() {
            t.fill(0.0);
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.blocks[0].dense.in_dim
    }

    pub fn hidden(&self) -> usize {
        self.head_weight.len()
    }

    pub fn to_block(&self) -> Result<TensorBlock> {
        TensorBlock::from_params(BLOCK_KIND, self)
    }

    pub fn from_block(block: &TensorBlock) -> Result<Self> {
        let first = block
            .shapes
            .first()
            .ok_or_else(|| Error::Format("empty evidence-net block".into()))?;
        let (hidden, input_dim) = match first.as_slice() {
            [h, i] => (*h, *i),
            _ => return Err(Error::Format("bad first dense shape".into())),
        };
        let mut p = Self::zeros(input_dim, hidden);
        block.load_into(BLOCK_KIND, &mut p)?;
        Ok(p)
    }

    pub fn to_text(&self) -> Result<String> {
        Ok(self.to_block()?.to_text())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_block(&TensorBlock::parse_one(text)?)
    }
}

impl ParamSet for EvidenceNetParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(4 * self.blocks.len() + 2);
        for b in &self.blocks {
            out.extend([
                b.dense.weight.as_slice(),
                &b.dense.bias,
                &b.norm.gain,
                &b.norm.shift,
            ]);
        }
        out.push(&self.head_weight);
        out.push(std::slice::from_ref(&self.head_bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(4 * self.blocks.len() + 2);
        for b in &mut self.blocks {
            out.push(&mut b.dense.weight);
            out.push(&mut b.dense.bias);
            out.push(&mut b.norm.gain);
            out.push(&mut b.norm.shift);
        }
        out.push(&mut self.head_weight);
        out.push(std::slice::from_mut(&mut self.head_bias));
        out
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut mask = Vec::new();
        for _ in &self.blocks {
            mask.extend([true, false, false, false]);
        }
        mask.extend([true, false]);
        mask
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(vec![b.dense.out_dim, b.dense.in_dim]);
            out.push(vec![b.dense.out_dim]);
            out.push(vec![b.norm.width()]);
            out.push(vec![b.norm.width()]);
        }
        out.push(vec![1, self.head_weight.len()]);
        out.push(vec![1]);
        out
    }
}

/// Activations retained by [`evidence_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct EvidenceCache {
    /// Input to each block.
    pub inputs: Vec<Vec<f64>>,
    pub norm_caches: Vec<LayerNormCache>,
    /// Layer-norm outputs, before the ReLU.
    pub normed: Vec<Vec<f64>>,
    /// Output of the last block.
    pub hidden: Vec<f64>,
    pub logit: f64,
    pub score: f64,
}

impl EvidenceCache {
    /// Signs of every ReLU pre-activation; identifies the linear region.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.normed.iter().flatten().map(|v| *v > 0.0).collect()
    }
}

pub fn evidence_forward(params: &EvidenceNetParams, features: &[f64]) -> Result<(f64, EvidenceCache)> {
    check_len("evidence-net input", params.input_dim(), features.len())?;
    let mut inputs = Vec::with_capacity(params.blocks.len());
    let mut norm_caches = Vec::with_capacity(params.blocks.len());
    let mut normed = Vec::with_capacity(params.blocks.len());
    let mut x = features.to_vec();
    for block in &params.blocks {
        let pre = block.dense.forward(&x)?;
        let (y, cache) = block.norm.forward(&pre);
        inputs.push(std::mem::replace(&mut x, y.iter().map(|v| v.max(0.0)).collect()));
        norm_caches.push(cache);
        normed.push(y);
    }
    let logit = dot(&params.head_weight, &x) + params.head_bias;
    let score = clamp_probability(logistic(logit));
    Ok((
        score,
        EvidenceCache {
            inputs,
            norm_caches,
            normed,
            hidden: x,
            logit,
            score,
        },
    ))
}

/// Convenience wrapper returning only the score.
pub fn evidence_score(params: &EvidenceNetParams, features: &[f64]) -> Result<f64> {
    evidence_forward(params, features).map(|(s, _)| s)
}

/// Binary reliability target: 1 when the branch classified the sample correctly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvidenceTarget {
    Unreliable,
    Reliable,
}

impl EvidenceTarget {
    pub fn value(self) -> f64 {
        match self {
            EvidenceTarget::Unreliable => 0.0,
            EvidenceTarget::Reliable => 1.0,
        }
    }
}

pub fn mae_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let total: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Gradient of `|score - target| + (l2 / 2) * sum(W^2)` for one sample,
/// where `W` ranges over the dense weights. The absolute value's derivative
/// is taken as zero where `score == target`.
pub fn evidence_backward(
    params: &EvidenceNetParams,
    cache: &EvidenceCache,
    target: f64,
    l2: f64,
) -> Result<EvidenceNetParams> {
    let mut grad = params.zeros_like();
    accumulate_backward(params, cache, target, 1.0, &mut grad)?;
    if l2 != 0.0 {
        let mask = params.decay_mask();
        for ((g, p), decay) in grad.tensors_mut().into_iter().zip(params.tensors()).zip(mask) {
            if decay {
                for (gi, pi) in g.iter_mut().zip(p) {
                    *gi += l2 * pi;
                }
            }
        }
    }
    Ok(grad)
}

fn accumulate_backward(
    params: &EvidenceNetParams,
    cache: &EvidenceCache,
    target: f64,
    weight: f64,
    grad: &mut EvidenceNetParams,
) -> Result<()> {
    check_len("evidence cache blocks", params.blocks.len(), cache.inputs.len())?;
    check_len("evidence cache width", params.hidden(), cache.hidden.len())?;
    let diff = cache.score - target;
    let d_score = if diff > 0.0 {
        weight
    } else if diff < 0.0 {
        -weight
    } else {
        0.0
    };
    if d_score == 0.0 {
        return Ok(());
    }
    let d_logit = d_score * cache.score * (1.0 - cache.score);
    grad.head_bias += d_logit;
    for (g, h) in grad.head_weight.iter_mut().zip(&cache.hidden) {
        *g += d_logit * h;
    }
    let mut d_out: Vec<f64> = params.head_weight.iter().map(|w| d_logit * w).collect();
    for k in (0..params.blocks.len()).rev() {
        let block = &params.blocks[k];
        let d_normed: Vec<f64> = d_out
            .iter()
            .zip(&cache.normed[k])
            .map(|(d, y)| if *y > 0.0 { *d } else { 0.0 })
            .collect();
        let gb = &mut grad.blocks[k];
        let d_pre = block.norm.backward(&cache.norm_caches[k], &d_normed, &mut gb.norm);
        d_out = block.dense.backward(&cache.inputs[k], &d_pre, &mut gb.dense);
    }
    Ok(())
}

/// Correctness targets for a branch: `Reliable` iff `(p > threshold)` agrees
/// with the label.
pub fn make_evidence_targets(
    branch_probs: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<Vec<EvidenceTarget>> {
    if branch_probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: branch_probs.len(),
            right: labels.len(),
        });
    }
    Ok(branch_probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if (p > threshold) == (y == 1) {
                EvidenceTarget::Reliable
            } else {
                EvidenceTarget::Unreliable
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Balanced {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<EvidenceTarget>,
    /// Set when only one target class was present and nothing was done.
    pub single_class: bool,
}

/// Replicates minority-class rows until both classes have equal counts.
///
/// Whole copies of the minority set are appended first; the remainder is
/// drawn without replacement under `seed`. Original rows keep their
/// positions at the front.
pub fn balance_by_duplication(
    features: &[Vec<f64>],
    targets: &[EvidenceTarget],
    seed: u64,
) -> Result<Balanced> {
    if features.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: features.len(),
            right: targets.len(),
        });
    }
    let reliable: Vec<usize> = (0..targets.len())
        .filter(|&i| targets[i] == EvidenceTarget::Reliable)
        .collect();
    let unreliable: Vec<usize> = (0..targets.len())
        .filter(|&i| targets[i] == EvidenceTarget::Unreliable)
        .collect();
    let mut out = Balanced {
        features: features.to_vec(),
        targets: targets.to_vec(),
        single_class: false,
    };
    if reliable.is_empty() || unreliable.is_empty() {
        out.single_class = true;
        return Ok(out);
    }
    let (minority, majority_len) = if reliable.len() < unreliable.len() {
        (reliable, unreliable.len())
    } else {
        (unreliable, reliable.len())
    };
    let full_copies = majority_len / minority.len();
    let remainder = majority_len % minority.len();
    for _ in 1..full_copies {
        for &i in &minority {
            out.features.push(features[i].clone());
            out.targets.push(targets[i]);
        }
    }
    if remainder > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks = index::sample(&mut rng, minority.len(), remainder).into_vec();
        picks.sort_unstable();
        for k in picks {
            let i = minority[k];
            out.features.push(features[i].clone());
            out.targets.push(targets[i]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            epochs: 100,
            batch_size: 64,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Config("epochs, batch size and width must be >= 1".into()));
        }
        Ok(())
    }
}

fn target_values(targets: &[EvidenceTarget]) -> Vec<f64> {
    targets.iter().map(|t| t.value()).collect()
}

pub fn evaluate_mae(params: &EvidenceNetParams, features: &[Vec<f64>], targets: &[f64]) -> Result<f64> {
    let scores = features
        .iter()
        .map(|x| evidence_score(params, x))
        .collect::<Result<Vec<_>>>()?;
    mae_loss(&scores, targets)
}

/// Mini-batch Adam on MAE with seeded shuffling; keeps the epoch with the
/// lowest validation MAE (earliest on ties).
pub fn train_evidence_net(
    features: &[Vec<f64>],
    targets: &[EvidenceTarget],
    val_features: &[Vec<f64>],
    val_targets: &[EvidenceTarget],
    config: &TrainConfig,
) -> Result<(EvidenceNetParams, TrainingLog)> {
    config.validate()?;
    if features.is_empty() || val_features.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if features.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: features.len(),
            right: targets.len(),
        });
    }
    if val_features.len() != val_targets.len() {
        return Err(Error::LengthMismatch {
            left: val_features.len(),
            right: val_targets.len(),
        });
    }
    let input_dim = features[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = EvidenceNetParams::init(input_dim, config.hidden, config.seed);
    let mut state = AdamState::for_params(&params);
    let adam = AdamConfig::new(config.learning_rate, config.weight_decay);
    let train_t = target_values(targets);
    let val_t = target_values(val_targets);

    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut log = TrainingLog::default();
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut grad = params.zeros_like();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_abs = 0.0;
        for batch in order.chunks(config.batch_size) {
            for t in grad.tensors_mut() {
                t.fill(0.0);
            }
            let w = 1.0 / batch.len() as f64;
            for &i in batch {
                let (score, cache) = evidence_forward(&params, &features[i])?;
                epoch_abs += (score - train_t[i]).abs();
                accumulate_backward(&params, &cache, train_t[i], w, &mut grad)?;
            }
            adam_step(&mut params, &grad, &mut state, &adam)?;
        }
        let train_loss = epoch_abs / features.len() as f64;
        let val_loss = evaluate_mae(&params, val_features, &val_t)?;
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best_loss {
            best_loss = val_loss;
            best = params.clone();
            log.best_epoch = epoch;
        }
    }
    Ok((best, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    use EvidenceTarget::{Reliable as R, Unreliable as U};

    #[test]
    fn zero_network_scores_half() {
        let p = EvidenceNetParams::zeros(5, 32);
        let (s, _) = evidence_forward(&p, &[1.0, -2.0, 0.3, 4.0, 0.0]).unwrap();
        assert_eq!(s, 0.5);
    }

    #[test]
    fn forward_shape_error() {
        let p = EvidenceNetParams::init(4, 8, 1);
        assert!(matches!(
            evidence_forward(&p, &[1.0, 2.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn forward_is_replayable() {
        let p = EvidenceNetParams::init(6, 32, 42);
        let x = [0.1, -0.3, 2.0, 0.7, -1.1, 0.0];
        let a = evidence_score(&p, &x).unwrap();
        let b = evidence_score(&EvidenceNetParams::init(6, 32, 42), &x).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(mae_loss(&[0.8, 0.2], &[1.0, 0.0]).unwrap(), 0.2, epsilon = 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 7, 100] {
            let t: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..2u8))).collect();
            assert_eq!(mae_loss(&vec![0.5; n], &t).unwrap(), 0.5);
        }
        assert!(matches!(mae_loss(&[], &[]), Err(Error::EmptyBatch)));
        assert!(matches!(mae_loss(&[0.1], &[]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn gradient_vanishes_at_perfect_fit() {
        let p = EvidenceNetParams::init(3, 8, 9);
        let (s, cache) = evidence_forward(&p, &[0.5, 0.1, -0.2]).unwrap();
        let g = evidence_backward(&p, &cache, s, 0.0).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn zero_input_zero_gain_kills_first_dense_gradient() {
        let mut p = EvidenceNetParams::init(4, 8, 5);
        for b in &mut p.blocks {
            b.norm.gain.fill(0.0);
        }
        let (_, cache) = evidence_forward(&p, &[0.0; 4]).unwrap();
        let g = evidence_backward(&p, &cache, 1.0, 0.0).unwrap();
        assert!(g.blocks[0].dense.weight.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn l2_term_only_on_dense_weights() {
        let p = EvidenceNetParams::init(3, 4, 2);
        let (s, cache) = evidence_forward(&p, &[0.1, 0.2, 0.3]).unwrap();
        let g = evidence_backward(&p, &cache, s, 0.5).unwrap();
        for (i, w) in p.blocks[0].dense.weight.iter().enumerate() {
            assert_abs_diff_eq!(g.blocks[0].dense.weight[i], 0.5 * w, epsilon = 1e-15);
        }
        assert!(g.blocks[0].norm.gain.iter().all(|v| *v == 0.0));
        assert_eq!(g.head_bias, 0.0);
    }

    #[test]
    fn targets_examples() {
        let t = make_evidence_targets(&[0.8, 0.3, 0.6], &[1, 1, 0], 0.5).unwrap();
        assert_eq!(t, vec![R, U, U]);
        let t = make_evidence_targets(&[0.9, 0.1, 0.7], &[1, 0, 1], 0.5).unwrap();
        assert!(t.iter().all(|x| *x == R));
        assert_eq!(make_evidence_targets(&[0.5], &[1], 0.5).unwrap(), vec![U]);
        assert!(make_evidence_targets(&[0.5], &[], 0.5).is_err());
    }

    fn rows(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64]).collect()
    }

    fn count(t: &[EvidenceTarget], which: EvidenceTarget) -> usize {
        t.iter().filter(|x| **x == which).count()
    }

    #[test]
    fn balance_whole_copies() {
        let targets = vec![R, R, U, R, R, U, R, R];
        let b = balance_by_duplication(&rows(8), &targets, 1).unwrap();
        assert_eq!(count(&b.targets, R), 6);
        assert_eq!(count(&b.targets, U), 6);
        assert_eq!(&b.features[..8], &rows(8)[..]);
        assert!(!b.single_class);
    }

    #[test]
    fn balance_with_remainder() {
        let targets = vec![R, U, R, R, U, R, R];
        let b = balance_by_duplication(&rows(7), &targets, 11).unwrap();
        assert_eq!(count(&b.targets, U), 5);
        assert_eq!(count(&b.targets, R), 5);
        // 7 originals, one full extra copy of both zeros, one seeded draw
        assert_eq!(b.features[7..9], [vec![1.0], vec![4.0]]);
        let drawn = &b.features[9][0];
        assert!(*drawn == 1.0 || *drawn == 4.0);
        let again = balance_by_duplication(&rows(7), &targets, 11).unwrap();
        assert_eq!(again, b);
    }

    #[test]
    fn balance_noop_cases() {
        let targets = vec![R, U, U, R];
        let b = balance_by_duplication(&rows(4), &targets, 0).unwrap();
        assert_eq!(b.features, rows(4));
        let single = balance_by_duplication(&rows(3), &[R, R, R], 0).unwrap();
        assert!(single.single_class);
        assert_eq!(single.targets.len(), 3);
    }

    #[test]
    fn persistence_round_trip() {
        let p = EvidenceNetParams::init(7, 32, 77);
        let back = EvidenceNetParams::from_text(&p.to_text().unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn training_rejects_empty() {
        let cfg = TrainConfig::default();
        assert!(matches!(
            train_evidence_net(&[], &[], &rows(1), &[R], &cfg),
            Err(Error::EmptyBatch)
        ));
    }
}

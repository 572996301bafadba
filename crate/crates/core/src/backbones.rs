//! Branch classifiers. Each emits a [`BranchOutput`]: a probability of the
//! positive class plus the feature vector its evidence network consumes.
//!
//! * tabular branch: logistic regression over standardized continuous
//!   columns and one-hot categoricals, or [`FcNetParams`] with per-column
//!   embeddings and projections;
//! * vector branch: logistic regression over the second modality;
//! * fusion branch: concatenated branch features through a width-4
//!   bottleneck and a linear decision layer.
//!
//! All three are trained with full-batch Adam on cross-entropy, either
//! jointly (summed losses, fusion gradients flowing into the branches) or
//! one after the other.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{check_len, Error, Result};
use crate::nn::{
    adam_step, clamp_probability, dot, logistic, AdamConfig, AdamState, Dense, EpochLog,
    LayerNorm, LayerNormCache, ParamSet, TrainingLog,
};

pub const FC_WIDTH: usize = 32;
pub const FUSION_WIDTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BranchId {
    Tabular,
    Vector,
    Fusion,
}

impl BranchId {
    pub const ALL: [BranchId; 3] = [BranchId::Tabular, BranchId::Vector, BranchId::Fusion];

    pub fn name(self) -> &'static str {
        match self {
            BranchId::Tabular => "a",
            BranchId::Vector => "b",
            BranchId::Fusion => "fusion",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.trim() {
            "a" => Some(BranchId::Tabular),
            "b" => Some(BranchId::Vector),
            "fusion" => Some(BranchId::Fusion),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutput {
    pub branch: BranchId,
    pub probability: f64,
    pub logit: f64,
    pub features: Vec<f64>,
}

/// `-[y ln p + (1 - y) ln(1 - p)]` with `p` clamped away from 0 and 1.
pub fn cross_entropy(p: f64, y: u8) -> f64 {
    let p = clamp_probability(p);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn mean_cross_entropy(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: probs.len(),
            right: labels.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let total: f64 = probs.iter().zip(labels).map(|(&p, &y)| cross_entropy(p, y)).sum();
    Ok(total / probs.len() as f64)
}

/// `dCE/dlogit` for a logistic output.
fn ce_logit_grad(logit: f64, y: u8) -> f64 {
    logistic(logit) - f64::from(y)
}

// ---------------------------------------------------------------------------
// Logistic regression

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogRegParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }
}

impl ParamSet for LogRegParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.weights, std::slice::from_ref(&self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weights, std::slice::from_mut(&mut self.bias)]
    }

    fn decay_mask(&self) -> Vec<bool> {
        vec![true, false]
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![1, self.weights.len()], vec![1]]
    }
}

fn logreg_output(params: &LogRegParams, x: &[f64], branch: BranchId) -> Result<BranchOutput> {
    check_len("logistic regression input", params.dim(), x.len())?;
    let logit = dot(&params.weights, x) + params.bias;
    let mut features = Vec::with_capacity(x.len() + 1);
    features.extend_from_slice(x);
    features.push(logit);
    Ok(BranchOutput {
        branch,
        probability: clamp_probability(logistic(logit)),
        logit,
        features,
    })
}

/// Tabular-branch logistic regression. Features are the input followed by the logit.
pub fn logreg_forward(params: &LogRegParams, x: &[f64]) -> Result<BranchOutput> {
    logreg_output(params, x, BranchId::Tabular)
}

/// Logistic regression over the vector modality.
pub fn vector_branch_forward(params: &LogRegParams, x: &[f64]) -> Result<BranchOutput> {
    logreg_output(params, x, BranchId::Vector)
}

/// Accumulates the gradient of a loss whose derivative w.r.t. the logit is
/// `d_logit` and w.r.t. the exposed features is `d_features`.
fn logreg_backward(x: &[f64], d_logit: f64, d_features: Option<&[f64]>, grad: &mut LogRegParams) {
    // the last exposed feature is the logit itself
    let d = d_logit + d_features.and_then(|f| f.last().copied()).unwrap_or(0.0);
    grad.bias += d;
    for (g, xi) in grad.weights.iter_mut().zip(x) {
        *g += d * xi;
    }
}

/// Continuous values followed by a one-hot block per categorical column.
pub fn tabular_design(codes: &[usize], continuous: &[f64], cardinalities: &[usize]) -> Result<Vec<f64>> {
    check_len("categorical codes", cardinalities.len(), codes.len())?;
    let mut x = Vec::with_capacity(continuous.len() + cardinalities.iter().sum::<usize>());
    x.extend_from_slice(continuous);
    for (col, (&code, &card)) in codes.iter().zip(cardinalities).enumerate() {
        if code >= card {
            return Err(category_error(col, code));
        }
        let start = x.len();
        x.resize(start + card, 0.0);
        x[start + code] = 1.0;
    }
    Ok(x)
}

fn category_error(col: usize, code: usize) -> Error {
    Error::CategoryOutOfRange {
        row: 0,
        column: format!("categorical[{col}]"),
        value: code.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Embedding network for tabular data

/// Each categorical column owns an embedding table and each continuous
/// column a `1 -> width` projection. Every projected column vector goes
/// through a shared layer norm and ReLU; the results are summed and fed to a
/// logistic head.
#[derive(Debug, Clone, PartialEq)]
pub struct FcNetParams {
    pub cardinalities: Vec<usize>,
    /// Row-major `cardinality x width` per categorical column.
    pub embeddings: Vec<Vec<f64>>,
    pub projections: Vec<Dense>,
    pub norm: LayerNorm,
    pub head_weight: Vec<f64>,
    pub head_bias: f64,
}

impl FcNetParams {
    pub fn init(cardinalities: &[usize], n_continuous: usize, width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = cardinalities
            .iter()
            .map(|&c| (0..c * width).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect();
        let projections = (0..n_continuous).map(|_| Dense::init(1, width, &mut rng)).collect();
        let head = Dense::init(width, 1, &mut rng);
        Self {
            cardinalities: cardinalities.to_vec(),
            embeddings,
            projections,
            norm: LayerNorm::new(width),
            head_weight: head.weight,
            head_bias: 0.0,
        }
    }

    pub fn width(&self) -> usize {
        self.head_weight.len()
    }

    pub fn embedding_row(&self, column: usize, code: usize) -> &[f64] {
        let w = self.width();
        &self.embeddings[column][code * w..(code + 1) * w]
    }
}

impl ParamSet for FcNetParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.embeddings.iter().map(Vec::as_slice).collect();
        for p in &self.projections {
            out.push(&p.weight);
            out.push(&p.bias);
        }
        out.push(&self.norm.gain);
        out.push(&self.norm.shift);
        out.push(&self.head_weight);
        out.push(std::slice::from_ref(&self.head_bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.embeddings.iter_mut().map(Vec::as_mut_slice).collect();
        for p in &mut self.projections {
            out.push(&mut p.weight);
            out.push(&mut p.bias);
        }
        out.push(&mut self.norm.gain);
        out.push(&mut self.norm.shift);
        out.push(&mut self.head_weight);
        out.push(std::slice::from_mut(&mut self.head_bias));
        out
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.embeddings.len()];
        for _ in &self.projections {
            mask.extend([true, false]);
        }
        mask.extend([false, false, true, false]);
        mask
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        let w = self.width();
        let mut out: Vec<Vec<usize>> = self.cardinalities.iter().map(|&c| vec![c, w]).collect();
        for _ in &self.projections {
            out.push(vec![w, 1]);
            out.push(vec![w]);
        }
        out.extend([vec![w], vec![w], vec![1, w], vec![1]]);
        out
    }
}

#[derive(Debug, Clone)]
pub struct FcNetCache {
    /// One entry per categorical column, then per continuous column.
    pub norm_caches: Vec<LayerNormCache>,
    pub normed: Vec<Vec<f64>>,
    pub hidden: Vec<f64>,
    pub logit: f64,
}

impl FcNetCache {
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.normed.iter().flatten().map(|v| *v > 0.0).collect()
    }
}

pub fn fcnet_forward_cached(
    params: &FcNetParams,
    codes: &[usize],
    continuous: &[f64],
) -> Result<(BranchOutput, FcNetCache)> {
    check_len("categorical codes", params.cardinalities.len(), codes.len())?;
    check_len("continuous values", params.projections.len(), continuous.len())?;
    let width = params.width();
    let mut hidden = vec![0.0; width];
    let n_units = codes.len() + continuous.len();
    let mut norm_caches = Vec::with_capacity(n_units);
    let mut normed = Vec::with_capacity(n_units);
    let mut add_unit = |pre: &[f64]| {
        let (y, cache) = params.norm.forward(pre);
        for (h, v) in hidden.iter_mut().zip(&y) {
            *h += v.max(0.0);
        }
        norm_caches.push(cache);
        normed.push(y);
    };
    for (col, &code) in codes.iter().enumerate() {
        if code >= params.cardinalities[col] {
            return Err(category_error(col, code));
        }
        add_unit(params.embedding_row(col, code));
    }
    for (proj, &x) in params.projections.iter().zip(continuous) {
        add_unit(&proj.forward(&[x])?);
    }
    let logit = dot(&params.head_weight, &hidden) + params.head_bias;
    let out = BranchOutput {
        branch: BranchId::Tabular,
        probability: clamp_probability(logistic(logit)),
        logit,
        features: hidden.clone(),
    };
    Ok((
        out,
        FcNetCache {
            norm_caches,
            normed,
            hidden,
            logit,
        },
    ))
}

pub fn fcnet_forward(params: &FcNetParams, codes: &[usize], continuous: &[f64]) -> Result<BranchOutput> {
    fcnet_forward_cached(params, codes, continuous).map(|(o, _)| o)
}

/// Accumulates into `grad`; only the embedding rows selected by `codes` are touched.
pub fn fcnet_backward(
    params: &FcNetParams,
    cache: &FcNetCache,
    codes: &[usize],
    continuous: &[f64],
    d_logit: f64,
    d_features: Option<&[f64]>,
    grad: &mut FcNetParams,
) {
    let width = params.width();
    grad.head_bias += d_logit;
    let mut d_hidden: Vec<f64> = params.head_weight.iter().map(|w| d_logit * w).collect();
    if let Some(df) = d_features {
        for (d, f) in d_hidden.iter_mut().zip(df) {
            *d += f;
        }
    }
    for (g, h) in grad.head_weight.iter_mut().zip(&cache.hidden) {
        *g += d_logit * h;
    }
    for (unit, (norm_cache, y)) in cache.norm_caches.iter().zip(&cache.normed).enumerate() {
        let d_normed: Vec<f64> = d_hidden
            .iter()
            .zip(y)
            .map(|(d, v)| if *v > 0.0 { *d } else { 0.0 })
            .collect();
        let d_pre = params.norm.backward(norm_cache, &d_normed, &mut grad.norm);
        if unit < codes.len() {
            let row = codes[unit] * width;
            for (g, d) in grad.embeddings[unit][row..row + width].iter_mut().zip(&d_pre) {
                *g += d;
            }
        } else {
            let j = unit - codes.len();
            params.projections[j].backward(&[continuous[j]], &d_pre, &mut grad.projections[j]);
        }
    }
}

// ---------------------------------------------------------------------------
// Concatenation fusion head

/// `concat(features) -> Dense(width 4) -> Dense(1) -> logistic`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionHeadParams {
    pub input_widths: Vec<usize>,
    pub bottleneck: Dense,
    pub head_weight: Vec<f64>,
    pub head_bias: f64,
}

impl FusionHeadParams {
    pub fn init(input_widths: &[usize], width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total = input_widths.iter().sum();
        let bottleneck = Dense::init(total, width, &mut rng);
        let head = Dense::init(width, 1, &mut rng);
        Self {
            input_widths: input_widths.to_vec(),
            bottleneck,
            head_weight: head.weight,
            head_bias: 0.0,
        }
    }

    pub fn zeros(input_widths: &[usize], width: usize) -> Self {
        Self {
            input_widths: input_widths.to_vec(),
            bottleneck: Dense::zeros(input_widths.iter().sum(), width),
            head_weight: vec![0.0; width],
            head_bias: 0.0,
        }
    }
}

impl ParamSet for FusionHeadParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            &self.bottleneck.weight,
            &self.bottleneck.bias,
            &self.head_weight,
            std::slice::from_ref(&self.head_bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.bottleneck.weight,
            &mut self.bottleneck.bias,
            &mut self.head_weight,
            std::slice::from_mut(&mut self.head_bias),
        ]
    }

    fn decay_mask(&self) -> Vec<bool> {
        vec![true, false, true, false]
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        vec![
            vec![self.bottleneck.out_dim, self.bottleneck.in_dim],
            vec![self.bottleneck.out_dim],
            vec![1, self.head_weight.len()],
            vec![1],
        ]
    }
}

#[derive(Debug, Clone)]
pub struct FusionCache {
    pub input: Vec<f64>,
    pub bottleneck: Vec<f64>,
}

pub fn fusion_forward_cached(
    params: &FusionHeadParams,
    branch_features: &[&[f64]],
) -> Result<(BranchOutput, FusionCache)> {
    check_len("fusion branch count", params.input_widths.len(), branch_features.len())?;
    let mut input = Vec::with_capacity(params.bottleneck.in_dim);
    for (f, &w) in branch_features.iter().zip(&params.input_widths) {
        check_len("fusion branch width", w, f.len())?;
        input.extend_from_slice(f);
    }
    let bottleneck = params.bottleneck.forward(&input)?;
    let logit = dot(&params.head_weight, &bottleneck) + params.head_bias;
    let out = BranchOutput {
        branch: BranchId::Fusion,
        probability: clamp_probability(logistic(logit)),
        logit,
        features: bottleneck.clone(),
    };
    Ok((out, FusionCache { input, bottleneck }))
}

pub fn fusion_forward(params: &FusionHeadParams, branch_features: &[&[f64]]) -> Result<BranchOutput> {
    fusion_forward_cached(params, branch_features).map(|(o, _)| o)
}

/// Accumulates parameter gradients and returns `dL/d(features)` split per branch.
pub fn fusion_backward(
    params: &FusionHeadParams,
    cache: &FusionCache,
    d_logit: f64,
    grad: &mut FusionHeadParams,
) -> Vec<Vec<f64>> {
    grad.head_bias += d_logit;
    for (g, h) in grad.head_weight.iter_mut().zip(&cache.bottleneck) {
        *g += d_logit * h;
    }
    let d_bottleneck: Vec<f64> = params.head_weight.iter().map(|w| d_logit * w).collect();
    let d_input = params
        .bottleneck
        .backward(&cache.input, &d_bottleneck, &mut grad.bottleneck);
    let mut out = Vec::with_capacity(params.input_widths.len());
    let mut start = 0;
    for &w in &params.input_widths {
        out.push(d_input[start..start + w].to_vec());
        start += w;
    }
    out
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageMode {
    /// Summed losses; fusion-head gradients flow into the branch models.
    Joint,
    /// Branches first, then the fusion head on their frozen features.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackboneConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub mode: StageMode,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            weight_decay: 0.0,
            epochs: 300,
            seed: 0,
            mode: StageMode::Joint,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.epochs == 0 || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "backbone training needs learning_rate > 0, epochs >= 1, weight_decay >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Full-batch Adam. `objective` returns the training loss and accumulates
/// its gradient; the parameters with the lowest `validation` loss are kept
/// (earliest epoch on ties).
fn fit_full_batch<P: ParamSet>(
    mut params: P,
    config: &BackboneConfig,
    mut objective: impl FnMut(&P, &mut P) -> Result<f64>,
    validation: impl Fn(&P) -> Result<f64>,
) -> Result<(P, TrainingLog)> {
    config.validate()?;
    let adam = AdamConfig::new(config.learning_rate, config.weight_decay);
    let mut state = AdamState::for_params(&params);
    let mut grad = params.zeros_like();
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut log = TrainingLog::default();
    for epoch in 1..=config.epochs {
        for t in grad.tensors_mut() {
            t.fill(0.0);
        }
        let train_loss = objective(&params, &mut grad)?;
        adam_step(&mut params, &grad, &mut state, &adam)?;
        let val_loss = validation(&params)?;
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

fn check_split<T>(x: &[T], y: &[u8]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

fn logreg_loss(params: &LogRegParams, x: &[Vec<f64>], y: &[u8], grad: Option<&mut LogRegParams>) -> Result<f64> {
    let n = x.len() as f64;
    let mut total = 0.0;
    let mut grad = grad;
    for (xi, &yi) in x.iter().zip(y) {
        let out = logreg_forward(params, xi)?;
        total += cross_entropy(out.probability, yi);
        if let Some(g) = grad.as_deref_mut() {
            logreg_backward(xi, ce_logit_grad(out.logit, yi) / n, None, g);
        }
    }
    Ok(total / n)
}

/// Logistic regression from a zero start on mean cross-entropy.
pub fn logreg_train(
    train_x: &[Vec<f64>],
    train_y: &[u8],
    val_x: &[Vec<f64>],
    val_y: &[u8],
    config: &BackboneConfig,
) -> Result<(LogRegParams, TrainingLog)> {
    check_split(train_x, train_y)?;
    check_split(val_x, val_y)?;
    let init = LogRegParams::zeros(train_x[0].len());
    fit_full_batch(
        init,
        config,
        |p, g| logreg_loss(p, train_x, train_y, Some(g)),
        |p| logreg_loss(p, val_x, val_y, None),
    )
}

/// Same contract as [`logreg_train`] over the vector modality.
pub fn vector_branch_train(
    train_x: &[Vec<f64>],
    train_y: &[u8],
    val_x: &[Vec<f64>],
    val_y: &[u8],
    config: &BackboneConfig,
) -> Result<(LogRegParams, TrainingLog)> {
    logreg_train(train_x, train_y, val_x, val_y, config)
}

/// Categorical codes and continuous values of one row.
pub type TabularRow = (Vec<usize>, Vec<f64>);

fn fcnet_loss(params: &FcNetParams, rows: &[TabularRow], y: &[u8], grad: Option<&mut FcNetParams>) -> Result<f64> {
    let n = rows.len() as f64;
    let mut total = 0.0;
    let mut grad = grad;
    for ((codes, cont), &yi) in rows.iter().zip(y) {
        let (out, cache) = fcnet_forward_cached(params, codes, cont)?;
        total += cross_entropy(out.probability, yi);
        if let Some(g) = grad.as_deref_mut() {
            fcnet_backward(params, &cache, codes, cont, ce_logit_grad(out.logit, yi) / n, None, g);
        }
    }
    Ok(total / n)
}

pub fn fcnet_train(
    train: &[TabularRow],
    train_y: &[u8],
    val: &[TabularRow],
    val_y: &[u8],
    cardinalities: &[usize],
    config: &BackboneConfig,
) -> Result<(FcNetParams, TrainingLog)> {
    check_split(train, train_y)?;
    check_split(val, val_y)?;
    let init = FcNetParams::init(cardinalities, train[0].1.len(), FC_WIDTH, config.seed);
    fit_full_batch(
        init,
        config,
        |p, g| fcnet_loss(p, train, train_y, Some(g)),
        |p| fcnet_loss(p, val, val_y, None),
    )
}

fn fusion_loss(
    params: &FusionHeadParams,
    features: &[Vec<Vec<f64>>],
    y: &[u8],
    grad: Option<&mut FusionHeadParams>,
) -> Result<f64> {
    let n = features.len() as f64;
    let mut total = 0.0;
    let mut grad = grad;
    for (f, &yi) in features.iter().zip(y) {
        let refs: Vec<&[f64]> = f.iter().map(Vec::as_slice).collect();
        let (out, cache) = fusion_forward_cached(params, &refs)?;
        total += cross_entropy(out.probability, yi);
        if let Some(g) = grad.as_deref_mut() {
            fusion_backward(params, &cache, ce_logit_grad(out.logit, yi) / n, g);
        }
    }
    Ok(total / n)
}

/// Trains only the fusion head on fixed per-branch feature vectors.
pub fn fusion_train(
    train: &[Vec<Vec<f64>>],
    train_y: &[u8],
    val: &[Vec<Vec<f64>>],
    val_y: &[u8],
    config: &BackboneConfig,
) -> Result<(FusionHeadParams, TrainingLog)> {
    check_split(train, train_y)?;
    check_split(val, val_y)?;
    let widths: Vec<usize> = train[0].iter().map(Vec::len).collect();
    let init = FusionHeadParams::init(&widths, FUSION_WIDTH, config.seed);
    fit_full_batch(
        init,
        config,
        |p, g| fusion_loss(p, train, train_y, Some(g)),
        |p| fusion_loss(p, val, val_y, None),
    )
}

// ---------------------------------------------------------------------------
// The three-branch system

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backbone {
    LogReg,
    FcNet,
}

impl Backbone {
    pub fn name(self) -> &'static str {
        match self {
            Backbone::LogReg => "logreg",
            Backbone::FcNet => "fcnet",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "logreg" => Some(Backbone::LogReg),
            "fcnet" => Some(Backbone::FcNet),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TabularModel {
    LogReg {
        params: LogRegParams,
        cardinalities: Vec<usize>,
    },
    FcNet(FcNetParams),
}

enum TabularCache {
    LogReg(Vec<f64>),
    FcNet(FcNetCache),
}

impl TabularModel {
    pub fn backbone(&self) -> Backbone {
        match self {
            TabularModel::LogReg { .. } => Backbone::LogReg,
            TabularModel::FcNet(_) => Backbone::FcNet,
        }
    }

    pub fn feature_width(&self) -> usize {
        match self {
            TabularModel::LogReg { params, .. } => params.dim() + 1,
            TabularModel::FcNet(p) => p.width(),
        }
    }

    pub fn forward(&self, sample: &Sample) -> Result<BranchOutput> {
        self.forward_cached(sample).map(|(o, _)| o)
    }

    fn forward_cached(&self, sample: &Sample) -> Result<(BranchOutput, TabularCache)> {
        match self {
            TabularModel::LogReg {
                params,
                cardinalities,
            } => {
                let x = tabular_design(&sample.codes, &sample.continuous, cardinalities)?;
                let out = logreg_forward(params, &x)?;
                Ok((out, TabularCache::LogReg(x)))
            }
            TabularModel::FcNet(p) => {
                let (out, cache) = fcnet_forward_cached(p, &sample.codes, &sample.continuous)?;
                Ok((out, TabularCache::FcNet(cache)))
            }
        }
    }

    fn backward(
        &self,
        cache: &TabularCache,
        sample: &Sample,
        d_logit: f64,
        d_features: Option<&[f64]>,
        grad: &mut TabularModel,
    ) {
        match (self, cache, grad) {
            (TabularModel::LogReg { .. }, TabularCache::LogReg(x), TabularModel::LogReg { params: g, .. }) => {
                logreg_backward(x, d_logit, d_features, g);
            }
            (TabularModel::FcNet(p), TabularCache::FcNet(c), TabularModel::FcNet(g)) => {
                fcnet_backward(p, c, &sample.codes, &sample.continuous, d_logit, d_features, g);
            }
            _ => unreachable!("gradient container matches its model"),
        }
    }
}

impl ParamSet for TabularModel {
    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            TabularModel::LogReg { params, .. } => params.tensors(),
            TabularModel::FcNet(p) => p.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            TabularModel::LogReg { params, .. } => params.tensors_mut(),
            TabularModel::FcNet(p) => p.tensors_mut(),
        }
    }

    fn decay_mask(&self) -> Vec<bool> {
        match self {
            TabularModel::LogReg { params, .. } => params.decay_mask(),
            TabularModel::FcNet(p) => p.decay_mask(),
        }
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        match self {
            TabularModel::LogReg { params, .. } => params.shapes(),
            TabularModel::FcNet(p) => p.shapes(),
        }
    }
}

/// Tabular branch, vector branch and the fusion head over their features.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchSet {
    pub tabular: TabularModel,
    pub vector: LogRegParams,
    pub fusion: FusionHeadParams,
}

impl ParamSet for BranchSet {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = self.tabular.tensors();
        out.extend(self.vector.tensors());
        out.extend(self.fusion.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.tabular.tensors_mut();
        out.extend(self.vector.tensors_mut());
        out.extend(self.fusion.tensors_mut());
        out
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut out = self.tabular.decay_mask();
        out.extend(self.vector.decay_mask());
        out.extend(self.fusion.decay_mask());
        out
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        let mut out = self.tabular.shapes();
        out.extend(self.vector.shapes());
        out.extend(self.fusion.shapes());
        out
    }
}

/// Dimensions of the inputs a [`BranchSet`] is built for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputLayout {
    pub cardinalities: Vec<usize>,
    pub n_continuous: usize,
    pub vector_dim: usize,
}

impl BranchSet {
    pub fn init(backbone: Backbone, layout: &InputLayout, seed: u64) -> Self {
        let tabular = match backbone {
            Backbone::LogReg => TabularModel::LogReg {
                params: LogRegParams::zeros(layout.n_continuous + layout.cardinalities.iter().sum::<usize>()),
                cardinalities: layout.cardinalities.clone(),
            },
            Backbone::FcNet => TabularModel::FcNet(FcNetParams::init(
                &layout.cardinalities,
                layout.n_continuous,
                FC_WIDTH,
                seed,
            )),
        };
        let widths = [tabular.feature_width(), layout.vector_dim + 1];
        Self {
            tabular,
            vector: LogRegParams::zeros(layout.vector_dim),
            fusion: FusionHeadParams::init(&widths, FUSION_WIDTH, seed.wrapping_add(1)),
        }
    }

    pub fn output(&self, branch: BranchId, sample: &Sample) -> Result<BranchOutput> {
        match branch {
            BranchId::Tabular => self.tabular.forward(sample),
            BranchId::Vector => vector_branch_forward(&self.vector, &sample.vector),
            BranchId::Fusion => Ok(self.outputs(sample)?[2].clone()),
        }
    }

    /// Outputs of all three branches, in [`BranchId::ALL`] order.
    pub fn outputs(&self, sample: &Sample) -> Result<[BranchOutput; 3]> {
        let a = self.tabular.forward(sample)?;
        let b = vector_branch_forward(&self.vector, &sample.vector)?;
        let f = fusion_forward(&self.fusion, &[&a.features, &b.features])?;
        Ok([a, b, f])
    }

    /// Summed mean cross-entropy of the three heads; accumulates the joint
    /// gradient into `grad` when given.
    pub fn joint_loss(&self, samples: &[Sample], grad: Option<&mut BranchSet>) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n = samples.len() as f64;
        let mut total = 0.0;
        let mut grad = grad;
        for s in samples {
            let (a, cache_a) = self.tabular.forward_cached(s)?;
            let b = vector_branch_forward(&self.vector, &s.vector)?;
            let (f, cache_f) = fusion_forward_cached(&self.fusion, &[&a.features, &b.features])?;
            total += cross_entropy(a.probability, s.label)
                + cross_entropy(b.probability, s.label)
                + cross_entropy(f.probability, s.label);
            if let Some(g) = grad.as_deref_mut() {
                let d_inputs = fusion_backward(&self.fusion, &cache_f, ce_logit_grad(f.logit, s.label) / n, &mut g.fusion);
                self.tabular.backward(
                    &cache_a,
                    s,
                    ce_logit_grad(a.logit, s.label) / n,
                    Some(&d_inputs[0]),
                    &mut g.tabular,
                );
                logreg_backward(
                    &s.vector,
                    ce_logit_grad(b.logit, s.label) / n,
                    Some(&d_inputs[1]),
                    &mut g.vector,
                );
            }
        }
        Ok(total / n)
    }
}

/// Trains the tabular, vector and fusion heads. Returns the selected
/// parameters and one log per optimization run (one for joint mode, three
/// for sequential mode).
pub fn train_branches(
    train: &[Sample],
    val: &[Sample],
    backbone: Backbone,
    layout: &InputLayout,
    config: &BackboneConfig,
) -> Result<(BranchSet, Vec<TrainingLog>)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let init = BranchSet::init(backbone, layout, config.seed);
    match config.mode {
        StageMode::Joint => {
            let (set, log) = fit_full_batch(
                init,
                config,
                |p, g| p.joint_loss(train, Some(g)),
                |p| p.joint_loss(val, None),
            )?;
            Ok((set, vec![log]))
        }
        StageMode::Sequential => {
            let y_train: Vec<u8> = train.iter().map(|s| s.label).collect();
            let y_val: Vec<u8> = val.iter().map(|s| s.label).collect();
            let (tabular, log_a) = match backbone {
                Backbone::LogReg => {
                    let design = |s: &Sample| tabular_design(&s.codes, &s.continuous, &layout.cardinalities);
                    let xt = train.iter().map(design).collect::<Result<Vec<_>>>()?;
                    let xv = val.iter().map(design).collect::<Result<Vec<_>>>()?;
                    let (params, log) = logreg_train(&xt, &y_train, &xv, &y_val, config)?;
                    (
                        TabularModel::LogReg {
                            params,
                            cardinalities: layout.cardinalities.clone(),
                        },
                        log,
                    )
                }
                Backbone::FcNet => {
                    let rows = |v: &[Sample]| -> Vec<TabularRow> {
                        v.iter().map(|s| (s.codes.clone(), s.continuous.clone())).collect()
                    };
                    let (params, log) = fcnet_train(
                        &rows(train),
                        &y_train,
                        &rows(val),
                        &y_val,
                        &layout.cardinalities,
                        config,
                    )?;
                    (TabularModel::FcNet(params), log)
                }
            };
            let vt: Vec<Vec<f64>> = train.iter().map(|s| s.vector.clone()).collect();
            let vv: Vec<Vec<f64>> = val.iter().map(|s| s.vector.clone()).collect();
            let (vector, log_b) = vector_branch_train(&vt, &y_train, &vv, &y_val, config)?;
            let features = |v: &[Sample]| -> Result<Vec<Vec<Vec<f64>>>> {
                v.iter()
                    .map(|s| {
                        let a = tabular.forward(s)?;
                        let b = vector_branch_forward(&vector, &s.vector)?;
                        Ok(vec![a.features, b.features])
                    })
                    .collect()
            };
            let fusion_cfg = BackboneConfig {
                seed: config.seed.wrapping_add(1),
                ..*config
            };
            let (fusion, log_f) = fusion_train(&features(train)?, &y_train, &features(val)?, &y_val, &fusion_cfg)?;
            Ok((
                BranchSet {
                    tabular,
                    vector,
                    fusion,
                },
                vec![log_a, log_b, log_f],
            ))
        }
    }
}

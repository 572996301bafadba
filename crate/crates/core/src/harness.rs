//! Experiment pipeline: data preparation, backbone training, evidence-net
//! training, fused prediction, evaluation and artifact output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::backbones::{
    train_branches, Backbone, BackboneConfig, BranchId, BranchSet, InputLayout, StageMode,
};
use crate::config::KeyValues;
use crate::data::{
    labels, load_csv, split_80_10_10, synth_generate, undersample_majority, Sample, SampleScaler,
    SplitSet, Standardizer, SynthConfig, TabularSchema,
};
use crate::dst::{calibrated_mass, combine_many, decide, Decision, Label};
use crate::error::{Error, Result};
use crate::evidence::{
    balance_by_duplication, evidence_score, make_evidence_targets, train_evidence_net,
    EvidenceNetParams, EvidenceTarget, TrainConfig,
};
use crate::metrics::{
    confusion_from_predictions, evidence_histogram, reports_to_csv, HistogramBins, MetricsReport,
    DEFAULT_BINS,
};
use crate::nn::{ParamSet, TrainingLog};
use crate::persist::TensorBlock;

pub const DEFAULT_EVIDENCE_CLAMP: f64 = 1e-6;

pub const METHODS: [&str; 5] = ["branch_a", "branch_b", "concat_fusion", "average_fusion", "dst_fusion"];

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Synthetic conflict benchmark. Without an explicit seed each run seed
    /// generates its own draw.
    Synthetic { config: SynthConfig, fixed_seed: Option<u64> },
    Csv { data: PathBuf, schema: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub source: DataSource,
    pub backbone: Backbone,
    pub fusion_set: Vec<BranchId>,
    pub stage1: BackboneConfig,
    pub evidence: TrainConfig,
    pub evidence_clamp: f64,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub undersample: bool,
    raw: KeyValues,
}

const KNOWN_KEYS: &[&str] = &[
    "dataset",
    "data.source",
    "data.csv",
    "data.schema",
    "synth.n_samples",
    "synth.dim_a",
    "synth.categorical_a",
    "synth.cardinality",
    "synth.dim_b",
    "synth.reliability_a",
    "synth.reliability_b",
    "synth.conflict_rate",
    "synth.noise",
    "synth.artifact",
    "synth.seed",
    "backbone",
    "fusion_set",
    "stage1.learning_rate",
    "stage1.weight_decay",
    "stage1.epochs",
    "stage1.mode",
    "evidence.learning_rate",
    "evidence.weight_decay",
    "evidence.epochs",
    "evidence.batch_size",
    "evidence.hidden",
    "evidence_clamp",
    "seeds",
    "out_dir",
    "undersample",
];

/// Keys that do not change what a trained system contains.
const NON_TRAINING_KEYS: &[&str] = &["fusion_set", "seeds", "out_dir"];

pub fn parse_fusion_set(text: &str) -> Result<Vec<BranchId>> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let b = BranchId::from_name(part)
            .ok_or_else(|| Error::Config(format!("unknown branch `{}` in fusion set", part.trim())))?;
        if out.contains(&b) {
            return Err(Error::Config(format!("branch `{}` listed twice in fusion set", b.name())));
        }
        out.push(b);
    }
    Ok(out)
}

fn fusion_set_text(set: &[BranchId]) -> String {
    set.iter().map(|b| b.name()).collect::<Vec<_>>().join(",")
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let seeds = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("invalid seed `{}`", s.trim())))
        })
        .collect::<Result<Vec<u64>>>()?;
    if seeds.is_empty() {
        return Err(Error::Config("`seeds` must list at least one seed".into()));
    }
    Ok(seeds)
}

impl ExperimentConfig {
    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let kv = KeyValues::parse(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_key_values(kv, base)
    }

    pub fn from_key_values(kv: KeyValues, base_dir: &Path) -> Result<Self> {
        if let Some((k, _)) = kv.entries().find(|(k, _)| !KNOWN_KEYS.contains(k)) {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
        let source = match kv.require("data.source")? {
            "synthetic" => {
                let d = SynthConfig::default();
                let config = SynthConfig {
                    n_samples: kv.parse_or("synth.n_samples", d.n_samples)?,
                    dim_a: kv.parse_or("synth.dim_a", d.dim_a)?,
                    categorical_a: kv.parse_or("synth.categorical_a", d.categorical_a)?,
                    cardinality: kv.parse_or("synth.cardinality", d.cardinality)?,
                    dim_b: kv.parse_or("synth.dim_b", d.dim_b)?,
                    reliability_a: kv.parse_or("synth.reliability_a", d.reliability_a)?,
                    reliability_b: kv.parse_or("synth.reliability_b", d.reliability_b)?,
                    conflict_rate: kv.parse_or("synth.conflict_rate", d.conflict_rate)?,
                    noise: kv.parse_or("synth.noise", d.noise)?,
                    artifact: kv.parse_or("synth.artifact", d.artifact)?,
                    seed: 0,
                };
                config.validate().map_err(|e| Error::Config(e.to_string()))?;
                let fixed_seed = match kv.get("synth.seed") {
                    Some(_) => Some(kv.parse_or("synth.seed", 0u64)?),
                    None => None,
                };
                DataSource::Synthetic { config, fixed_seed }
            }
            "csv" => {
                let data = base_dir.join(kv.require("data.csv")?);
                let schema = base_dir.join(kv.require("data.schema")?);
                for p in [&data, &schema] {
                    if !p.is_file() {
                        return Err(Error::Config(format!("file not found: {}", p.display())));
                    }
                }
                DataSource::Csv { data, schema }
            }
            other => {
                return Err(Error::Config(format!(
                    "`data.source` must be `synthetic` or `csv`, got `{other}`"
                )))
            }
        };
        let default_name = match source {
            DataSource::Synthetic { .. } => "synthetic",
            DataSource::Csv { .. } => "csv",
        };
        let backbone_name = kv.get("backbone").unwrap_or("logreg");
        let backbone = Backbone::from_name(backbone_name)
            .ok_or_else(|| Error::Config(format!("unknown backbone `{backbone_name}`")))?;
        let fusion_set = parse_fusion_set(kv.get("fusion_set").unwrap_or("a,b,fusion"))?;

        let d1 = BackboneConfig::default();
        let mode = match kv.get("stage1.mode").unwrap_or("joint") {
            "joint" => StageMode::Joint,
            "sequential" => StageMode::Sequential,
            other => return Err(Error::Config(format!("unknown stage1.mode `{other}`"))),
        };
        let stage1 = BackboneConfig {
            learning_rate: kv.parse_or("stage1.learning_rate", d1.learning_rate)?,
            weight_decay: kv.parse_or("stage1.weight_decay", d1.weight_decay)?,
            epochs: kv.parse_or("stage1.epochs", d1.epochs)?,
            seed: 0,
            mode,
        };
        stage1.validate()?;
        let d2 = TrainConfig::default();
        let evidence = TrainConfig {
            learning_rate: kv.parse_or("evidence.learning_rate", d2.learning_rate)?,
            weight_decay: kv.parse_or("evidence.weight_decay", d2.weight_decay)?,
            epochs: kv.parse_or("evidence.epochs", d2.epochs)?,
            batch_size: kv.parse_or("evidence.batch_size", d2.batch_size)?,
            hidden: kv.parse_or("evidence.hidden", d2.hidden)?,
            seed: 0,
        };
        evidence.validate()?;
        let evidence_clamp = kv.parse_or("evidence_clamp", DEFAULT_EVIDENCE_CLAMP)?;
        if !(evidence_clamp > 0.0 && evidence_clamp < 0.5) {
            return Err(Error::Config(format!("evidence_clamp {evidence_clamp} outside (0, 0.5)")));
        }
        Ok(Self {
            dataset: kv.get("dataset").unwrap_or(default_name).to_string(),
            source,
            backbone,
            fusion_set,
            stage1,
            evidence,
            evidence_clamp,
            seeds: parse_seeds(kv.require("seeds")?)?,
            out_dir: PathBuf::from(kv.get("out_dir").unwrap_or("out")),
            undersample: kv.parse_or("undersample", true)?,
            raw: kv,
        })
    }

    pub fn key_values(&self) -> &KeyValues {
        &self.raw
    }

    /// Hex SHA-256 over the training-relevant config keys and the seed.
    pub fn fingerprint(&self, seed: u64) -> String {
        let mut kv = KeyValues::default();
        for (k, v) in self.raw.entries() {
            if !NON_TRAINING_KEYS.contains(&k) {
                kv.set(k, v);
            }
        }
        let mut h = Sha256::new();
        h.update(kv.canonical().as_bytes());
        h.update(format!("seed = {seed}\n").as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out_dir.join(format!("seed_{seed}"))
    }
}

/// SplitMix64 step; derives independent stream seeds from a run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SYNTH: u64 = 1;
const STREAM_UNDERSAMPLE: u64 = 2;
const STREAM_SPLIT: u64 = 3;
const STREAM_STAGE1: u64 = 4;
const STREAM_EVIDENCE: u64 = 10;
const STREAM_BALANCE: u64 = 20;

pub struct LoadedData {
    pub samples: Vec<Sample>,
    pub schema: TabularSchema,
}

impl ExperimentConfig {
    /// Generator settings used for `seed`, if the data are synthetic.
    pub fn synth_config(&self, seed: u64) -> Option<SynthConfig> {
        match &self.source {
            DataSource::Synthetic { config, fixed_seed } => Some(SynthConfig {
                seed: fixed_seed.unwrap_or_else(|| derive_seed(seed, STREAM_SYNTH)),
                ..*config
            }),
            DataSource::Csv { .. } => None,
        }
    }
}

pub fn load_data(config: &ExperimentConfig, seed: u64) -> Result<LoadedData> {
    match &config.source {
        DataSource::Synthetic { .. } => {
            let cfg = config.synth_config(seed).expect("synthetic source");
            let (samples, _) = synth_generate(&cfg)?;
            Ok(LoadedData {
                samples,
                schema: cfg.schema(),
            })
        }
        DataSource::Csv { data, schema } => {
            let schema = TabularSchema::parse(&fs::read_to_string(schema)?)?;
            let samples = load_csv(data, &schema)?;
            Ok(LoadedData { samples, schema })
        }
    }
}

/// Standardized splits plus what is needed to rebuild the models.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub splits: SplitSet,
    pub scaler: SampleScaler,
    pub layout: InputLayout,
}

/// Undersample (optional), split, then standardize with training statistics.
pub fn prepare_data(config: &ExperimentConfig, seed: u64) -> Result<PreparedData> {
    let loaded = load_data(config, seed)?;
    let samples = if config.undersample {
        undersample_majority(&loaded.samples, derive_seed(seed, STREAM_UNDERSAMPLE))?
    } else {
        loaded.samples
    };
    let mut splits = split_80_10_10(&samples, derive_seed(seed, STREAM_SPLIT))?;
    let scaler = SampleScaler::fit(&splits.train);
    splits.train = scaler.apply_all(&splits.train);
    splits.validation = scaler.apply_all(&splits.validation);
    splits.test = scaler.apply_all(&splits.test);
    let layout = InputLayout {
        cardinalities: loaded.schema.cardinalities(),
        n_continuous: loaded.schema.continuous.len(),
        vector_dim: loaded.schema.vector_dim(),
    };
    Ok(PreparedData {
        splits,
        scaler,
        layout,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedSystem {
    pub backbone: Backbone,
    pub layout: InputLayout,
    pub branches: BranchSet,
    /// Indexed by [`BranchId::index`].
    pub evidence: Vec<EvidenceNetParams>,
    pub scaler: SampleScaler,
    pub fusion_set: Vec<BranchId>,
    pub evidence_clamp: f64,
    pub fingerprint: String,
    pub seed: u64,
}

/// Per-branch evidence score clamped into `[clamp, 1 - clamp]`.
pub fn clamp_evidence(s: f64, clamp: f64) -> f64 {
    s.clamp(clamp, 1.0 - clamp)
}

/// Dempster fusion of calibrated branch masses.
pub fn dst_fuse(probs: &[f64], evidence: &[f64], clamp: f64) -> Result<Decision> {
    if probs.len() != evidence.len() {
        return Err(Error::LengthMismatch {
            left: probs.len(),
            right: evidence.len(),
        });
    }
    let masses = probs
        .iter()
        .zip(evidence)
        .map(|(&p, &s)| calibrated_mass(p, clamp_evidence(s, clamp)))
        .collect::<Result<Vec<_>>>()?;
    Ok(decide(&combine_many(&masses)?))
}

/// Mean probability, positive iff strictly above one half.
pub fn average_fuse(probs: &[f64]) -> Result<Decision> {
    if probs.is_empty() {
        return Err(Error::EmptyList);
    }
    let score = probs.iter().sum::<f64>() / probs.len() as f64;
    Ok(Decision {
        label: if score > 0.5 { Label::Positive } else { Label::Negative },
        score,
        conflict: 0.0,
    })
}

/// Everything the evaluators need about one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePrediction {
    /// Indexed by [`BranchId::index`].
    pub probabilities: [f64; 3],
    pub evidence: [f64; 3],
    pub dst: Decision,
    pub average: Decision,
}

impl TrainedSystem {
    /// Expects a standardized sample.
    pub fn predict(&self, sample: &Sample) -> Result<SamplePrediction> {
        let outputs = self.branches.outputs(sample)?;
        let mut probabilities = [0.0; 3];
        let mut evidence = [0.0; 3];
        for (i, out) in outputs.iter().enumerate() {
            probabilities[i] = out.probability;
            evidence[i] = evidence_score(&self.evidence[i], &out.features)?;
        }
        let pick = |v: &[f64; 3]| self.fusion_set.iter().map(|b| v[b.index()]).collect::<Vec<_>>();
        let dst = dst_fuse(&pick(&probabilities), &pick(&evidence), self.evidence_clamp)?;
        let average = average_fuse(&pick(&probabilities))?;
        Ok(SamplePrediction {
            probabilities,
            evidence,
            dst,
            average,
        })
    }

    /// Applies the stored standardization first.
    pub fn predict_raw(&self, sample: &Sample) -> Result<SamplePrediction> {
        check_raw(&self.layout, sample)?;
        self.predict(&self.scaler.apply(sample))
    }
}

fn check_raw(layout: &InputLayout, s: &Sample) -> Result<()> {
    crate::error::check_len("categorical codes", layout.cardinalities.len(), s.codes.len())?;
    crate::error::check_len("continuous values", layout.n_continuous, s.continuous.len())?;
    crate::error::check_len("vector values", layout.vector_dim, s.vector.len())
}

pub fn dst_predict(system: &TrainedSystem, sample: &Sample) -> Result<Decision> {
    Ok(system.predict(sample)?.dst)
}

pub fn average_fusion_predict(system: &TrainedSystem, sample: &Sample) -> Result<Decision> {
    Ok(system.predict(sample)?.average)
}

#[derive(Debug, Clone)]
pub struct Stage1 {
    pub branches: BranchSet,
    pub logs: Vec<TrainingLog>,
}

pub fn stage1_train_backbones(config: &ExperimentConfig, data: &PreparedData, seed: u64) -> Result<Stage1> {
    let cfg = BackboneConfig {
        seed: derive_seed(seed, STREAM_STAGE1),
        ..config.stage1
    };
    let (branches, logs) = train_branches(
        &data.splits.train,
        &data.splits.validation,
        config.backbone,
        &data.layout,
        &cfg,
    )?;
    Ok(Stage1 { branches, logs })
}

#[derive(Debug, Clone)]
pub struct EvidenceOutcome {
    pub params: EvidenceNetParams,
    pub log: Option<TrainingLog>,
    /// Set when the branch was all right (or all wrong) on the training split
    /// and a constant score is used instead of a trained network.
    pub constant: Option<f64>,
}

/// Evidence network whose output is `value` for every input.
pub fn constant_evidence_net(input_dim: usize, hidden: usize, value: f64) -> EvidenceNetParams {
    let mut p = EvidenceNetParams::zeros(input_dim, hidden);
    p.head_bias = (value / (1.0 - value)).ln();
    p
}

fn branch_features(branches: &BranchSet, samples: &[Sample], branch: BranchId) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut feats = Vec::with_capacity(samples.len());
    let mut probs = Vec::with_capacity(samples.len());
    for s in samples {
        let out = branches.output(branch, s)?;
        feats.push(out.features);
        probs.push(out.probability);
    }
    Ok((feats, probs))
}

/// Trains one evidence network per branch on frozen branch outputs.
pub fn stage2_train_evidence(
    config: &ExperimentConfig,
    branches: &BranchSet,
    splits: &SplitSet,
    seed: u64,
) -> Result<Vec<EvidenceOutcome>> {
    let train_labels = labels(&splits.train);
    let val_labels = labels(&splits.validation);
    BranchId::ALL
        .iter()
        .map(|&branch| {
            let (feats, probs) = branch_features(branches, &splits.train, branch)?;
            let targets = make_evidence_targets(&probs, &train_labels, 0.5)?;
            let balanced = balance_by_duplication(
                &feats,
                &targets,
                derive_seed(seed, STREAM_BALANCE + branch.index() as u64),
            )?;
            let input_dim = feats[0].len();
            if balanced.single_class {
                let value = if targets[0] == EvidenceTarget::Reliable {
                    1.0 - config.evidence_clamp
                } else {
                    config.evidence_clamp
                };
                warn!(
                    "branch {} has a single evidence class on the training split; using constant score {value}",
                    branch.name()
                );
                return Ok(EvidenceOutcome {
                    params: constant_evidence_net(input_dim, config.evidence.hidden, value),
                    log: None,
                    constant: Some(value),
                });
            }
            let (val_feats, val_probs) = branch_features(branches, &splits.validation, branch)?;
            let val_targets = make_evidence_targets(&val_probs, &val_labels, 0.5)?;
            let cfg = TrainConfig {
                seed: derive_seed(seed, STREAM_EVIDENCE + branch.index() as u64),
                ..config.evidence
            };
            let (params, log) =
                train_evidence_net(&balanced.features, &balanced.targets, &val_feats, &val_targets, &cfg)?;
            Ok(EvidenceOutcome {
                params,
                log: Some(log),
                constant: None,
            })
        })
        .collect()
}

/// Stages one and two for a single seed.
pub fn train_system(config: &ExperimentConfig, data: &PreparedData, seed: u64) -> Result<(TrainedSystem, Stage1, Vec<EvidenceOutcome>)> {
    let stage1 = stage1_train_backbones(config, data, seed)?;
    let outcomes = stage2_train_evidence(config, &stage1.branches, &data.splits, seed)?;
    let system = TrainedSystem {
        backbone: config.backbone,
        layout: data.layout.clone(),
        branches: stage1.branches.clone(),
        evidence: outcomes.iter().map(|o| o.params.clone()).collect(),
        scaler: data.scaler.clone(),
        fusion_set: config.fusion_set.clone(),
        evidence_clamp: config.evidence_clamp,
        fingerprint: config.fingerprint(seed),
        seed,
    };
    Ok((system, stage1, outcomes))
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    /// One report per entry of [`METHODS`].
    pub reports: Vec<MetricsReport>,
    /// Evidence histograms indexed by [`BranchId::index`].
    pub histograms: Vec<HistogramBins>,
    pub predictions: Vec<SamplePrediction>,
    pub labels: Vec<u8>,
}

impl Evaluation {
    /// Accuracy of each method restricted to samples where branches A and B
    /// disagree, with the subset size. `None` if the subset is empty.
    pub fn disagreement_accuracy(&self) -> Option<(usize, [f64; 5])> {
        let mut hits = [0usize; 5];
        let mut n = 0;
        for (p, &y) in self.predictions.iter().zip(&self.labels) {
            let a = p.probabilities[0] > 0.5;
            let b = p.probabilities[1] > 0.5;
            if a == b {
                continue;
            }
            n += 1;
            for (k, label) in method_labels(p).into_iter().enumerate() {
                hits[k] += usize::from(label == (y == 1));
            }
        }
        (n > 0).then(|| (n, hits.map(|h| h as f64 / n as f64)))
    }
}

fn method_labels(p: &SamplePrediction) -> [bool; 5] {
    [
        p.probabilities[0] > 0.5,
        p.probabilities[1] > 0.5,
        p.probabilities[2] > 0.5,
        p.average.label == Label::Positive,
        p.dst.label == Label::Positive,
    ]
}

/// Branch A, branch B, concat fusion, average fusion and DST fusion on the
/// (standardized) test split. DST is ranked by its pignistic score.
pub fn evaluate_all(system: &TrainedSystem, test: &[Sample], dataset: &str) -> Result<Evaluation> {
    let predictions = test.iter().map(|s| system.predict(s)).collect::<Result<Vec<_>>>()?;
    let y = labels(test);
    let mut reports = Vec::with_capacity(METHODS.len());
    for (k, method) in METHODS.iter().enumerate() {
        let scores: Vec<f64> = predictions
            .iter()
            .map(|p| match k {
                0..=2 => p.probabilities[k],
                3 => p.average.score,
                _ => p.dst.score,
            })
            .collect();
        let decided: Vec<bool> = predictions.iter().map(|p| method_labels(p)[k]).collect();
        let counts = confusion_from_predictions(&decided, &y)?;
        reports.push(MetricsReport::from_decisions(dataset, system.seed, method, &scores, &counts, &y)?);
    }
    let histograms = BranchId::ALL
        .iter()
        .map(|b| {
            let i = b.index();
            let scores: Vec<f64> = predictions.iter().map(|p| p.evidence[i]).collect();
            let correct: Vec<bool> = predictions
                .iter()
                .zip(&y)
                .map(|(p, &yi)| (p.probabilities[i] > 0.5) == (yi == 1))
                .collect();
            evidence_histogram(&scores, &correct, DEFAULT_BINS)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        reports,
        histograms,
        predictions,
        labels: y,
    })
}

// ---------------------------------------------------------------------------
// Persistence of trained systems

const SYSTEM_TAG: &str = "# evifuse-system v1";

fn standardizer_block(kind: &str, s: &Standardizer) -> Result<TensorBlock> {
    TensorBlock::new(kind, vec![vec![s.dim()], vec![s.dim()]], vec![s.mean.clone(), s.std.clone()])
}

fn standardizer_from(block: &TensorBlock, dim: usize) -> Result<Standardizer> {
    if block.shapes != vec![vec![dim], vec![dim]] {
        return Err(Error::Format(format!("bad `{}` block shape", block.kind)));
    }
    Ok(Standardizer {
        mean: block.data[0].clone(),
        std: block.data[1].clone(),
    })
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl TrainedSystem {
    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        let _ = writeln!(out, "{SYSTEM_TAG}");
        let meta = [
            ("fingerprint", self.fingerprint.clone()),
            ("seed", self.seed.to_string()),
            ("backbone", self.backbone.name().to_string()),
            ("cardinalities", join(&self.layout.cardinalities)),
            ("n_continuous", self.layout.n_continuous.to_string()),
            ("vector_dim", self.layout.vector_dim.to_string()),
            ("fusion_set", fusion_set_text(&self.fusion_set)),
            ("evidence_clamp", format!("{:?}", self.evidence_clamp)),
        ];
        for (k, v) in meta {
            let _ = writeln!(out, "# {k} = {v}");
        }
        standardizer_block("scaler-continuous", &self.scaler.continuous)?.write_to(&mut out);
        standardizer_block("scaler-vector", &self.scaler.vector)?.write_to(&mut out);
        TensorBlock::from_params("branch-a", &self.branches.tabular)?.write_to(&mut out);
        TensorBlock::from_params("branch-b", &self.branches.vector)?.write_to(&mut out);
        TensorBlock::from_params("fusion-head", &self.branches.fusion)?.write_to(&mut out);
        for e in &self.evidence {
            e.to_block()?.write_to(&mut out);
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        if text.lines().next() != Some(SYSTEM_TAG) {
            return Err(Error::Format("not a trained-system file".into()));
        }
        let meta_text: String = text
            .lines()
            .skip(1)
            .take_while(|l| l.starts_with("# "))
            .map(|l| format!("{}\n", &l[2..]))
            .collect();
        let meta = KeyValues::parse(&meta_text).map_err(|e| Error::Format(e.to_string()))?;
        let field = |k: &str| meta.require(k).map_err(|e| Error::Format(e.to_string()));
        let number = |k: &str| -> Result<usize> {
            field(k)?
                .parse()
                .map_err(|_| Error::Format(format!("bad `{k}` field")))
        };
        let backbone = Backbone::from_name(field("backbone")?)
            .ok_or_else(|| Error::Format("unknown backbone".into()))?;
        let cards = field("cardinalities")?;
        let cardinalities = if cards.is_empty() {
            Vec::new()
        } else {
            cards
                .split(',')
                .map(|c| c.parse().map_err(|_| Error::Format("bad cardinality".into())))
                .collect::<Result<Vec<usize>>>()?
        };
        let layout = InputLayout {
            cardinalities,
            n_continuous: number("n_continuous")?,
            vector_dim: number("vector_dim")?,
        };
        let blocks = TensorBlock::parse_all(text)?;
        if blocks.len() != 5 + BranchId::ALL.len() {
            return Err(Error::Format(format!("expected 8 blocks, found {}", blocks.len())));
        }
        let mut branches = BranchSet::init(backbone, &layout, 0);
        blocks[2].load_into("branch-a", &mut branches.tabular)?;
        blocks[3].load_into("branch-b", &mut branches.vector)?;
        blocks[4].load_into("fusion-head", &mut branches.fusion)?;
        let evidence = blocks[5..]
            .iter()
            .map(EvidenceNetParams::from_block)
            .collect::<Result<Vec<_>>>()?;
        for (e, b) in evidence.iter().zip(BranchId::ALL) {
            let expected = match b {
                BranchId::Tabular => branches.tabular.feature_width(),
                BranchId::Vector => layout.vector_dim + 1,
                BranchId::Fusion => branches.fusion.head_weight.len(),
            };
            if e.input_dim() != expected {
                return Err(Error::Format(format!("evidence net for branch {} has wrong input width", b.name())));
            }
        }
        let evidence_clamp: f64 = field("evidence_clamp")?
            .parse()
            .map_err(|_| Error::Format("bad evidence_clamp".into()))?;
        Ok(Self {
            backbone,
            scaler: SampleScaler {
                continuous: standardizer_from(&blocks[0], layout.n_continuous)?,
                vector: standardizer_from(&blocks[1], layout.vector_dim)?,
            },
            layout,
            branches,
            evidence,
            fusion_set: parse_fusion_set(field("fusion_set")?).map_err(|e| Error::Format(e.to_string()))?,
            evidence_clamp,
            fingerprint: field("fingerprint")?.to_string(),
            seed: field("seed")?
                .parse()
                .map_err(|_| Error::Format("bad seed".into()))?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn num_params(&self) -> usize {
        self.branches.num_params() + self.evidence.iter().map(ParamSet::num_params).sum::<usize>()
    }
}

// ---------------------------------------------------------------------------
// Runs

pub const SYSTEM_FILE: &str = "system.txt";
pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

fn histogram_file(branch: BranchId) -> String {
    format!("evidence_hist_{}.csv", branch.name())
}

fn training_log_csv(stage1: &Stage1, outcomes: &[EvidenceOutcome]) -> String {
    let mut out = String::from("stage,run,epoch,train_loss,val_loss\n");
    for (r, log) in stage1.logs.iter().enumerate() {
        for e in &log.epochs {
            let _ = writeln!(out, "stage1,{r},{},{:.8},{:.8}", e.epoch, e.train_loss, e.val_loss);
        }
    }
    for (b, o) in BranchId::ALL.iter().zip(outcomes) {
        if let Some(log) = &o.log {
            for e in &log.epochs {
                let _ = writeln!(out, "evidence,{},{},{:.8},{:.8}", b.name(), e.epoch, e.train_loss, e.val_loss);
            }
        }
    }
    out
}

/// Trains one seed and writes its system and training log.
pub fn train_seed(config: &ExperimentConfig, seed: u64) -> Result<TrainedSystem> {
    let data = prepare_data(config, seed)?;
    info!(
        "seed {seed}: {} train / {} validation / {} test samples",
        data.splits.train.len(),
        data.splits.validation.len(),
        data.splits.test.len()
    );
    let (system, stage1, outcomes) = train_system(config, &data, seed)?;
    let dir = config.seed_dir(seed);
    fs::create_dir_all(&dir)?;
    system.save(&dir.join(SYSTEM_FILE))?;
    fs::write(dir.join("training_log.csv"), training_log_csv(&stage1, &outcomes))?;
    Ok(system)
}

/// Loads a seed's saved system, checks it against the config and evaluates
/// it on the test split, writing the per-seed report and histograms.
pub fn evaluate_seed(config: &ExperimentConfig, seed: u64) -> Result<Evaluation> {
    let dir = config.seed_dir(seed);
    let mut system = TrainedSystem::load(&dir.join(SYSTEM_FILE))?;
    if system.fingerprint != config.fingerprint(seed) {
        return Err(Error::Config(format!(
            "trained system in {} was produced by a different config",
            dir.display()
        )));
    }
    system.fusion_set = config.fusion_set.clone();
    let data = prepare_data(config, seed)?;
    let eval = evaluate_all(&system, &data.splits.test, &config.dataset)?;
    fs::write(dir.join(REPORT_FILE), reports_to_csv(&eval.reports))?;
    for (b, h) in BranchId::ALL.iter().zip(&eval.histograms) {
        fs::write(dir.join(histogram_file(*b)), h.to_csv())?;
    }
    Ok(eval)
}

pub fn manifest(config: &ExperimentConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "evifuse {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "seeds = {}", join(&config.seeds));
    for &s in &config.seeds {
        let _ = writeln!(out, "fingerprint.seed_{s} = {}", config.fingerprint(s));
    }
    out.push_str("\n[config]\n");
    out.push_str(&config.key_values().canonical());
    out
}

/// Concatenates the per-seed reports (in seed-list order) and writes the
/// combined report and its per-method summary.
pub fn write_combined_report(config: &ExperimentConfig) -> Result<String> {
    let mut rows = Vec::new();
    let mut combined = String::from(crate::metrics::REPORT_HEADER);
    combined.push('\n');
    for &seed in &config.seeds {
        let path = config.seed_dir(seed).join(REPORT_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        rows.extend(crate::metrics::parse_report_csv(&text)?);
        // copy the formatted lines verbatim rather than re-rendering
        for line in text.lines().skip(1) {
            combined.push_str(line);
            combined.push('\n');
        }
    }
    let summary = crate::metrics::summarize(&rows);
    fs::write(config.out_dir.join(REPORT_FILE), &combined)?;
    fs::write(config.out_dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Trains and evaluates every seed (in parallel), then writes the combined
/// report, summary and manifest. Evaluations are returned in seed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<Evaluation>> {
    fs::create_dir_all(&config.out_dir)?;
    let evals = config
        .seeds
        .par_iter()
        .map(|&seed| {
            train_seed(config, seed)?;
            evaluate_seed(config, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    write_combined_report(config)?;
    fs::write(config.out_dir.join(MANIFEST_FILE), manifest(config))?;
    Ok(evals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn kv(text: &str) -> KeyValues {
        KeyValues::parse(text).unwrap()
    }

    #[test]
    fn config_defaults_and_errors() {
        let c = ExperimentConfig::from_key_values(kv("data.source = synthetic\nseeds = 1,2\n"), Path::new(".")).unwrap();
        assert_eq!(c.seeds, vec![1, 2]);
        assert_eq!(c.fusion_set, BranchId::ALL.to_vec());
        assert_eq!(c.backbone, Backbone::LogReg);
        assert_eq!(c.evidence_clamp, DEFAULT_EVIDENCE_CLAMP);

        let missing = ExperimentConfig::from_key_values(kv("data.source = synthetic\n"), Path::new("."));
        assert!(missing.unwrap_err().to_string().contains("seeds"));
        let unknown = ExperimentConfig::from_key_values(kv("data.source = synthetic\nseeds = 1\nfoo = 2\n"), Path::new("."));
        assert!(unknown.unwrap_err().to_string().contains("foo"));
        let no_file = ExperimentConfig::from_key_values(
            kv("data.source = csv\ndata.csv = nope.csv\ndata.schema = nope.txt\nseeds = 1\n"),
            Path::new("."),
        );
        assert!(matches!(no_file, Err(Error::Config(_))));
        assert!(parse_fusion_set("a,c").is_err());
        assert!(parse_fusion_set("a,a").is_err());
        assert_eq!(parse_fusion_set("a, b").unwrap(), vec![BranchId::Tabular, BranchId::Vector]);
    }

    #[test]
    fn fingerprint_ignores_output_keys() {
        let a = ExperimentConfig::from_key_values(kv("data.source = synthetic\nseeds = 1\nout_dir = x\n"), Path::new(".")).unwrap();
        let b = ExperimentConfig::from_key_values(kv("seeds = 1,2\ndata.source = synthetic\nfusion_set = a,b\n"), Path::new(".")).unwrap();
        assert_eq!(a.fingerprint(1), b.fingerprint(1));
        assert_ne!(a.fingerprint(1), a.fingerprint(2));
        let c = ExperimentConfig::from_key_values(kv("data.source = synthetic\nseeds = 1\nbackbone = fcnet\n"), Path::new(".")).unwrap();
        assert_ne!(a.fingerprint(1), c.fingerprint(1));
    }

    #[test]
    fn fusion_rules() {
        let d = dst_fuse(&[0.9, 0.9, 0.9], &[0.9, 0.9, 0.9], 1e-6).unwrap();
        assert_eq!(d.label, Label::Positive);
        assert!(d.score > 0.9);
        let neutral = dst_fuse(&[0.9, 0.2, 0.7], &[0.0, 0.0, 0.0], 1e-6).unwrap();
        assert_abs_diff_eq!(neutral.score, 0.5, epsilon = 1e-5);
        let follows = dst_fuse(&[0.9, 0.1], &[0.1, 0.9], 1e-6).unwrap();
        assert_eq!(follows.label, Label::Negative);
        // exact certainty in both directions is kept finite by the clamp
        assert!(dst_fuse(&[1.0, 0.0], &[1.0, 1.0], 1e-6).is_ok());

        let avg = average_fuse(&[0.9, 0.9, 0.9]).unwrap();
        assert_abs_diff_eq!(avg.score, 0.9, epsilon = 1e-15);
        assert_eq!(avg.label, Label::Positive);
        assert_eq!(average_fuse(&[0.9, 0.1, 0.5]).unwrap().label, Label::Negative);
    }

    #[test]
    fn constant_net_value() {
        let p = constant_evidence_net(5, 8, 1.0 - 1e-6);
        let s = evidence_score(&p, &[3.0, -1.0, 0.0, 2.0, 9.0]).unwrap();
        assert_abs_diff_eq!(s, 1.0 - 1e-6, epsilon = 1e-12);
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: Vec<u64> = (0..5).map(|s| derive_seed(7, s)).collect();
        for i in 0..5 {
            for j in i + 1..5 {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
        assert_eq!(derive_seed(7, 1), derive_seed(7, 1));
    }
}

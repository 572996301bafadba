//! Tabular ingestion, splitting, class balancing, standardization and the
//! synthetic two-modality benchmark generator.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::KeyValues;
use crate::error::{Error, Result};

/// One categorical column and its ordered category tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoricalColumn {
    pub name: String,
    pub levels: Vec<String>,
}

impl CategoricalColumn {
    pub fn cardinality(&self) -> usize {
        self.levels.len()
    }
}

/// A vector-modality column expands to CSV columns `<name>_0 .. <name>_{dim-1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VectorColumn {
    pub name: String,
    pub dim: usize,
}

impl VectorColumn {
    pub fn csv_columns(&self) -> impl Iterator<Item = String> + '_ {
        (0..self.dim).map(move |i| format!("{}_{i}", self.name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TabularSchema {
    pub label: String,
    pub categorical: Vec<CategoricalColumn>,
    pub continuous: Vec<String>,
    pub vectors: Vec<VectorColumn>,
}

impl TabularSchema {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for name in self.csv_header() {
            if name.is_empty() {
                return Err(Error::Schema("empty column name".into()));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::Schema(format!("duplicate column `{name}`")));
            }
        }
        for c in &self.categorical {
            if c.cardinality() < 2 {
                return Err(Error::Schema(format!(
                    "categorical column `{}` needs at least 2 levels",
                    c.name
                )));
            }
            let distinct: HashSet<&String> = c.levels.iter().collect();
            if distinct.len() != c.levels.len() {
                return Err(Error::Schema(format!("repeated level in `{}`", c.name)));
            }
        }
        if self.vectors.iter().any(|v| v.dim == 0) {
            return Err(Error::Schema("vector column of dimension 0".into()));
        }
        Ok(())
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.categorical.iter().map(|c| c.cardinality()).collect()
    }

    pub fn vector_dim(&self) -> usize {
        self.vectors.iter().map(|v| v.dim).sum()
    }

    /// Column order used when writing CSV files.
    pub fn csv_header(&self) -> Vec<String> {
        let mut cols = vec![self.label.clone()];
        cols.extend(self.categorical.iter().map(|c| c.name.clone()));
        cols.extend(self.continuous.iter().cloned());
        for v in &self.vectors {
            cols.extend(v.csv_columns());
        }
        cols
    }

    /// Parses the line-oriented schema format:
    ///
    /// ```text
    /// label = tkr
    /// categorical.sex = female,male   # or a cardinality: codes 0..n-1
    /// continuous = age,bmi
    /// vector.img = 16
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text).map_err(|e| Error::Schema(e.to_string()))?;
        let mut label = None;
        let mut categorical = Vec::new();
        let mut continuous = Vec::new();
        let mut vectors = Vec::new();
        for (key, value) in kv.entries() {
            if key == "label" {
                label = Some(value.to_string());
            } else if key == "continuous" {
                continuous.extend(split_list(value));
            } else if let Some(name) = key.strip_prefix("categorical.") {
                let levels = match value.parse::<usize>() {
                    Ok(n) => (0..n).map(|i| i.to_string()).collect(),
                    Err(_) => split_list(value),
                };
                categorical.push(CategoricalColumn {
                    name: name.to_string(),
                    levels,
                });
            } else if let Some(name) = key.strip_prefix("vector.") {
                let dim = value
                    .parse::<usize>()
                    .map_err(|_| Error::Schema(format!("bad dimension for `{key}`: {value}")))?;
                vectors.push(VectorColumn {
                    name: name.to_string(),
                    dim,
                });
            } else {
                return Err(Error::Schema(format!("unknown schema key `{key}`")));
            }
        }
        let schema = Self {
            label: label.ok_or_else(|| Error::Schema("missing key `label`".into()))?,
            categorical,
            continuous,
            vectors,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "label = {}", self.label);
        for c in &self.categorical {
            let _ = writeln!(s, "categorical.{} = {}", c.name, c.levels.join(","));
        }
        if !self.continuous.is_empty() {
            let _ = writeln!(s, "continuous = {}", self.continuous.join(","));
        }
        for v in &self.vectors {
            let _ = writeln!(s, "vector.{} = {}", v.name, v.dim);
        }
        s
    }
}

fn split_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// One subject: tabular modality (codes + continuous) and vector modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub codes: Vec<usize>,
    pub continuous: Vec<f64>,
    pub vector: Vec<f64>,
    pub label: u8,
}

pub fn labels(samples: &[Sample]) -> Vec<u8> {
    samples.iter().map(|s| s.label).collect()
}

pub fn load_csv(path: &Path, schema: &TabularSchema) -> Result<Vec<Sample>> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &TabularSchema) -> Result<Vec<Sample>> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let expected = schema.csv_header();
    let position = |name: &str| header.iter().position(|h| h == name);
    let mut index = Vec::with_capacity(expected.len());
    for name in &expected {
        index.push(
            position(name).ok_or_else(|| Error::Schema(format!("missing column `{name}`")))?,
        );
    }
    if let Some(extra) = header.iter().find(|h| !expected.contains(h)) {
        return Err(Error::Schema(format!("unexpected column `{extra}`")));
    }
    if header.len() != expected.len() {
        return Err(Error::Schema("duplicate column in header".into()));
    }

    let mut samples = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // header is line 1
        let row = i + 2;
        let record = record?;
        let field = |col: usize| -> Result<&str> {
            let name = &expected[col];
            match record.get(index[col]) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(Error::Parse {
                    row,
                    column: name.clone(),
                    message: "missing value".into(),
                }),
            }
        };
        let number = |col: usize| -> Result<f64> {
            let raw = field(col)?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: expected[col].clone(),
                    message: format!("not a number: `{raw}`"),
                })
        };

        let label = match field(0)? {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    row,
                    column: schema.label.clone(),
                    message: format!("label must be 0 or 1, got `{other}`"),
                })
            }
        };
        let mut col = 1;
        let mut codes = Vec::with_capacity(schema.categorical.len());
        for c in &schema.categorical {
            let token = field(col)?;
            let code = c.levels.iter().position(|l| l == token).ok_or_else(|| {
                Error::CategoryOutOfRange {
                    row,
                    column: c.name.clone(),
                    value: token.to_string(),
                }
            })?;
            codes.push(code);
            col += 1;
        }
        let mut continuous = Vec::with_capacity(schema.continuous.len());
        for _ in &schema.continuous {
            continuous.push(number(col)?);
            col += 1;
        }
        let mut vector = Vec::with_capacity(schema.vector_dim());
        for _ in 0..schema.vector_dim() {
            vector.push(number(col)?);
            col += 1;
        }
        samples.push(Sample {
            codes,
            continuous,
            vector,
            label,
        });
    }
    Ok(samples)
}

pub fn write_csv<W: std::io::Write>(writer: W, schema: &TabularSchema, samples: &[Sample]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(schema.csv_header())?;
    for s in samples {
        let mut row: Vec<String> = Vec::with_capacity(1 + s.codes.len() + s.continuous.len() + s.vector.len());
        row.push(s.label.to_string());
        for (c, &code) in schema.categorical.iter().zip(&s.codes) {
            row.push(c.levels[code].clone());
        }
        row.extend(s.continuous.iter().map(|v| format!("{v:?}")));
        row.extend(s.vector.iter().map(|v| format!("{v:?}")));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Train / validation / test partition. Index vectors refer to the input order.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSet {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
    pub train_idx: Vec<usize>,
    pub validation_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
    pub provenance: String,
}

/// `round(n / 10)`, halves rounded up.
fn tenth(n: usize) -> usize {
    (n + 5) / 10
}

/// Seeded, label-stratified 80/10/10 split. Test and validation each get
/// `round(0.1 n)` samples; train gets the remainder.
pub fn split_80_10_10(samples: &[Sample], seed: u64) -> Result<SplitSet> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::TooFewSamples { got: n, min: 10 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..n).filter(|&i| samples[i].label == 1).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| samples[i].label != 1).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let held_out = tenth(n);
    // Each held-out split gets the overall positive share, rounded.
    let n_pos = pos.len();
    let pos_share = |size: usize| ((size * n_pos) as f64 / n as f64).round() as usize;
    let take = |size: usize, pos: &mut Vec<usize>, neg: &mut Vec<usize>| {
        let p = pos_share(size).min(pos.len()).min(size);
        let q = (size - p).min(neg.len());
        let p = size - q;
        let mut out: Vec<usize> = pos.drain(..p).collect();
        out.extend(neg.drain(..q));
        out.sort_unstable();
        out
    };
    let test_idx = take(held_out, &mut pos, &mut neg);
    let validation_idx = take(held_out, &mut pos, &mut neg);
    let mut train_idx = pos;
    train_idx.extend(neg);
    train_idx.sort_unstable();

    let gather = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect();
    Ok(SplitSet {
        train: gather(&train_idx),
        validation: gather(&validation_idx),
        test: gather(&test_idx),
        train_idx,
        validation_idx,
        test_idx,
        seed,
        provenance: format!("stratified 80/10/10 split of {n} samples, seed {seed}"),
    })
}

/// Downsamples the majority class, without replacement, to the minority
/// count. Minority samples and the relative order of kept samples are
/// preserved.
pub fn undersample_majority(samples: &[Sample], seed: u64) -> Result<Vec<Sample>> {
    let pos: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == 1).collect();
    let neg: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label != 1).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass);
    }
    if pos.len() == neg.len() {
        return Ok(samples.to_vec());
    }
    let (minority, majority) = if pos.len() < neg.len() { (pos, neg) } else { (neg, pos) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = index::sample(&mut rng, majority.len(), minority.len());
    let mut keep: Vec<usize> = chosen.iter().map(|k| majority[k]).collect();
    keep.extend(minority);
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| samples[i].clone()).collect())
}

/// Per-column z-scoring with statistics from one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Columns with a standard deviation below this pass through unchanged.
pub const MIN_STD: f64 = 1e-12;

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population mean and standard deviation of each column of `rows`.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut n = 0usize;
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        for r in &rows {
            for (s, v) in sum.iter_mut().zip(r.iter()) {
                *s += v;
            }
            n += 1;
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        for r in &rows {
            for ((q, v), m) in sq.iter_mut().zip(r.iter()).zip(&mean) {
                *q += (v - m).powi(2);
            }
        }
        let mut out = Self { mean, std: Vec::with_capacity(dim) };
        for (j, q) in sq.iter().enumerate() {
            let std = (q / n as f64).sqrt();
            if std < MIN_STD {
                out.mean[j] = 0.0;
                out.std.push(1.0);
            } else {
                out.std.push(std);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

/// Fitted transforms for both real-valued blocks of a [`Sample`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleScaler {
    pub continuous: Standardizer,
    pub vector: Standardizer,
}

impl SampleScaler {
    pub fn fit(train: &[Sample]) -> Self {
        let cdim = train.first().map_or(0, |s| s.continuous.len());
        let vdim = train.first().map_or(0, |s| s.vector.len());
        Self {
            continuous: Standardizer::fit(train.iter().map(|s| s.continuous.as_slice()), cdim),
            vector: Standardizer::fit(train.iter().map(|s| s.vector.as_slice()), vdim),
        }
    }

    pub fn apply(&self, s: &Sample) -> Sample {
        Sample {
            codes: s.codes.clone(),
            continuous: self.continuous.apply(&s.continuous),
            vector: self.vector.apply(&s.vector),
            label: s.label,
        }
    }

    pub fn apply_all(&self, samples: &[Sample]) -> Vec<Sample> {
        samples.iter().map(|s| self.apply(s)).collect()
    }
}

/// How one modality of one synthetic sample was generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Corruption {
    Clean,
    /// Label-independent features.
    Null,
    /// Features drawn as if the label were flipped.
    WrongLabel,
}

impl Corruption {
    pub fn as_str(self) -> &'static str {
        match self {
            Corruption::Clean => "clean",
            Corruption::Null => "null",
            Corruption::WrongLabel => "wrong",
        }
    }

    pub fn is_corrupted(self) -> bool {
        self != Corruption::Clean
    }
}

/// Parameters of the synthetic benchmark.
///
/// Modality A is tabular (`categorical_a` columns of `cardinality` levels and
/// `dim_a` continuous columns), modality B is a `dim_b` vector. With
/// probability `conflict_rate` a sample has exactly one modality replaced by
/// wrong-label features, picked in proportion to `1 - reliability`. Otherwise
/// each modality is independently replaced by label-free features with
/// probability `1 - reliability`. Replaced continuous features also carry an
/// offset of size `artifact` along a fixed direction orthogonal to the class
/// signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub dim_a: usize,
    pub categorical_a: usize,
    pub cardinality: usize,
    pub dim_b: usize,
    pub reliability_a: f64,
    pub reliability_b: f64,
    pub conflict_rate: f64,
    pub noise: f64,
    pub artifact: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 4000,
            dim_a: 6,
            categorical_a: 2,
            cardinality: 3,
            dim_b: 8,
            reliability_a: 0.9,
            reliability_b: 0.65,
            conflict_rate: 0.3,
            noise: 1.0,
            artifact: 1.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        for (name, r) in [("reliability_a", self.reliability_a), ("reliability_b", self.reliability_b)] {
            if !(0.5..=1.0).contains(&r) {
                return bad(format!("{name} = {r} outside [0.5, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.conflict_rate) {
            return bad(format!("conflict_rate = {} outside [0, 1]", self.conflict_rate));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return bad(format!("noise = {} must be > 0", self.noise));
        }
        if !(self.artifact >= 0.0 && self.artifact.is_finite()) {
            return bad(format!("artifact = {} must be >= 0", self.artifact));
        }
        if self.dim_a < 2 || self.dim_b < 2 {
            return bad("dim_a and dim_b must be >= 2".into());
        }
        if self.categorical_a > 0 && self.cardinality < 2 {
            return bad("cardinality must be >= 2".into());
        }
        if self.n_samples == 0 {
            return bad("n_samples must be >= 1".into());
        }
        Ok(())
    }

    pub fn schema(&self) -> TabularSchema {
        TabularSchema {
            label: "label".into(),
            categorical: (0..self.categorical_a)
                .map(|i| CategoricalColumn {
                    name: format!("cat{i}"),
                    levels: (0..self.cardinality).map(|l| l.to_string()).collect(),
                })
                .collect(),
            continuous: (0..self.dim_a).map(|i| format!("a{i}")).collect(),
            vectors: vec![VectorColumn {
                name: "b".into(),
                dim: self.dim_b,
            }],
        }
    }
}

/// Generator bookkeeping for each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub modality_a: Vec<Corruption>,
    pub modality_b: Vec<Corruption>,
    pub forced_conflict: Vec<bool>,
}

impl SynthTruth {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,modality_a,modality_b,forced_conflict\n");
        for i in 0..self.modality_a.len() {
            let _ = writeln!(
                s,
                "{i},{},{},{}",
                self.modality_a[i].as_str(),
                self.modality_b[i].as_str(),
                u8::from(self.forced_conflict[i])
            );
        }
        s
    }
}

/// Fixed ±1 class-signal pattern and a unit-scale artifact direction
/// orthogonal to it.
fn directions(dim: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let signal: Vec<f64> = (0..dim)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    loop {
        let mut a: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let proj = a.iter().zip(&signal).map(|(x, s)| x * s).sum::<f64>() / dim as f64;
        for (x, s) in a.iter_mut().zip(&signal) {
            *x -= proj * s;
        }
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            // scale so that every coordinate is O(1), like the signal
            let scale = (dim as f64).sqrt() / norm;
            return (signal, a.into_iter().map(|x| x * scale).collect());
        }
    }
}

fn continuous_features(
    label_sign: f64,
    kind: Corruption,
    signal: &[f64],
    artifact_dir: &[f64],
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let (mean_sign, offset) = match kind {
        Corruption::Clean => (label_sign, 0.0),
        Corruption::Null => (0.0, config.artifact),
        Corruption::WrongLabel => (-label_sign, config.artifact),
    };
    signal
        .iter()
        .zip(artifact_dir)
        .map(|(s, a)| {
            let z: f64 = StandardNormal.sample(rng);
            mean_sign * s + offset * a + config.noise * z
        })
        .collect()
}

fn categorical_codes(label: u8, kind: Corruption, config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let card = config.cardinality;
    (0..config.categorical_a)
        .map(|_| {
            let effective = match kind {
                Corruption::Clean => Some(label),
                Corruption::WrongLabel => Some(1 - label),
                Corruption::Null => None,
            };
            match effective {
                // the label's own level with probability 0.6, otherwise uniform
                Some(l) if rng.random::<f64>() < 0.6 => {
                    if l == 1 {
                        card - 1
                    } else {
                        0
                    }
                }
                _ => rng.random_range(0..card),
            }
        })
        .collect()
}

/// Deterministic function of `config` (including its seed).
pub fn synth_generate(config: &SynthConfig) -> Result<(Vec<Sample>, SynthTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (signal_a, artifact_a) = directions(config.dim_a, &mut rng);
    let (signal_b, artifact_b) = directions(config.dim_b, &mut rng);
    let unrel_a = 1.0 - config.reliability_a;
    let unrel_b = 1.0 - config.reliability_b;
    let share_a = if unrel_a + unrel_b > 0.0 {
        unrel_a / (unrel_a + unrel_b)
    } else {
        0.5
    };

    let mut samples = Vec::with_capacity(config.n_samples);
    let mut truth = SynthTruth {
        modality_a: Vec::with_capacity(config.n_samples),
        modality_b: Vec::with_capacity(config.n_samples),
        forced_conflict: Vec::with_capacity(config.n_samples),
    };
    for _ in 0..config.n_samples {
        let label = u8::from(rng.random::<bool>());
        let sign = if label == 1 { 1.0 } else { -1.0 };
        let forced = rng.random::<f64>() < config.conflict_rate;
        let (kind_a, kind_b) = if forced {
            if rng.random::<f64>() < share_a {
                (Corruption::WrongLabel, Corruption::Clean)
            } else {
                (Corruption::Clean, Corruption::WrongLabel)
            }
        } else {
            let pick = |u: f64, rng: &mut ChaCha8Rng| {
                if rng.random::<f64>() < u {
                    Corruption::Null
                } else {
                    Corruption::Clean
                }
            };
            let a = pick(unrel_a, &mut rng);
            (a, pick(unrel_b, &mut rng))
        };
        let codes = categorical_codes(label, kind_a, config, &mut rng);
        let continuous = continuous_features(sign, kind_a, &signal_a, &artifact_a, config, &mut rng);
        let vector = continuous_features(sign, kind_b, &signal_b, &artifact_b, config, &mut rng);
        samples.push(Sample {
            codes,
            continuous,
            vector,
            label,
        });
        truth.modality_a.push(kind_a);
        truth.modality_b.push(kind_b);
        truth.forced_conflict.push(forced);
    }
    Ok((samples, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn schema() -> TabularSchema {
        TabularSchema::parse(
            "label = y\ncategorical.sex = f,m\ncategorical.site = 3\ncontinuous = age, bmi\nvector.img = 2\n",
        )
        .unwrap()
    }

    fn labelled(labels: &[u8]) -> Vec<Sample> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| Sample {
                codes: vec![],
                continuous: vec![i as f64],
                vector: vec![],
                label,
            })
            .collect()
    }

    #[test]
    fn schema_parsing() {
        let s = schema();
        assert_eq!(s.label, "y");
        assert_eq!(s.cardinalities(), vec![2, 3]);
        assert_eq!(s.categorical[1].levels, vec!["0", "1", "2"]);
        assert_eq!(s.continuous, vec!["age", "bmi"]);
        assert_eq!(
            s.csv_header(),
            vec!["y", "sex", "site", "age", "bmi", "img_0", "img_1"]
        );
        assert_eq!(TabularSchema::parse(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn schema_errors() {
        assert!(matches!(TabularSchema::parse("continuous = a\n"), Err(Error::Schema(_))));
        assert!(TabularSchema::parse("label = y\ncategorical.c = 1\n").is_err());
        assert!(TabularSchema::parse("label = y\ncontinuous = a,a\n").is_err());
        assert!(TabularSchema::parse("label = y\nweird = 3\n").is_err());
    }

    #[test]
    fn csv_empty_body() {
        let text = "y,sex,site,age,bmi,img_0,img_1\n";
        assert!(read_csv(text.as_bytes(), &schema()).unwrap().is_empty());
    }

    #[test]
    fn csv_unknown_category() {
        let text = "y,sex,site,age,bmi,img_0,img_1\n1,f,0,1,2,3,4\n0,x,1,1,2,3,4\n";
        match read_csv(text.as_bytes(), &schema()) {
            Err(Error::CategoryOutOfRange { row, column, value }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "sex");
                assert_eq!(value, "x");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_missing_and_extra_columns() {
        let missing = "y,sex,site,age,img_0,img_1\n";
        assert!(matches!(read_csv(missing.as_bytes(), &schema()), Err(Error::Schema(_))));
        let extra = "y,sex,site,age,bmi,img_0,img_1,zzz\n";
        assert!(matches!(read_csv(extra.as_bytes(), &schema()), Err(Error::Schema(_))));
    }

    #[test]
    fn csv_parse_errors_report_position() {
        let text = "y,sex,site,age,bmi,img_0,img_1\n1,f,0,1,abc,3,4\n";
        match read_csv(text.as_bytes(), &schema()) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "bmi");
            }
            other => panic!("unexpected {other:?}"),
        }
        let blank = "y,sex,site,age,bmi,img_0,img_1\n1,f,0,,2,3,4\n";
        assert!(matches!(read_csv(blank.as_bytes(), &schema()), Err(Error::Parse { .. })));
        let label = "y,sex,site,age,bmi,img_0,img_1\n2,f,0,1,2,3,4\n";
        assert!(matches!(read_csv(label.as_bytes(), &schema()), Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_column_order_is_free() {
        let text = "img_1,img_0,bmi,age,site,sex,y\n4,3,2.5,1,2,m,1\n";
        let s = read_csv(text.as_bytes(), &schema()).unwrap();
        assert_eq!(s[0].codes, vec![1, 2]);
        assert_eq!(s[0].continuous, vec![1.0, 2.5]);
        assert_eq!(s[0].vector, vec![3.0, 4.0]);
    }

    #[test]
    fn csv_write_read() {
        let samples = vec![Sample {
            codes: vec![1, 0],
            continuous: vec![0.1, -3.5],
            vector: vec![1e-7, 2.0],
            label: 1,
        }];
        let mut buf = Vec::new();
        write_csv(&mut buf, &schema(), &samples).unwrap();
        assert_eq!(read_csv(buf.as_slice(), &schema()).unwrap(), samples);
    }

    #[test]
    fn split_sizes() {
        let s = split_80_10_10(&labelled(&[0, 1].repeat(5)), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
        let big: Vec<u8> = (0..1717).map(|i| (i % 2) as u8).collect();
        let s = split_80_10_10(&labelled(&big), 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (1373, 172, 172));
        assert!(matches!(
            split_80_10_10(&labelled(&[0; 9]), 0),
            Err(Error::TooFewSamples { got: 9, min: 10 })
        ));
    }

    #[test]
    fn split_is_seeded_and_stratified() {
        let labels: Vec<u8> = (0..200).map(|i| u8::from(i % 4 == 0)).collect();
        let a = split_80_10_10(&labelled(&labels), 9).unwrap();
        let b = split_80_10_10(&labelled(&labels), 9).unwrap();
        assert_eq!(a, b);
        let c = split_80_10_10(&labelled(&labels), 10).unwrap();
        assert_ne!(a.test_idx, c.test_idx);
        let pos = a.test.iter().filter(|s| s.label == 1).count();
        assert_eq!(pos, 5);
    }

    #[test]
    fn undersample_policy() {
        let mut labels = vec![1u8; 100];
        labels.extend(vec![0u8; 900]);
        let out = undersample_majority(&labelled(&labels), 4).unwrap();
        assert_eq!(out.iter().filter(|s| s.label == 1).count(), 100);
        assert_eq!(out.iter().filter(|s| s.label == 0).count(), 100);
        // every minority sample survives
        assert!(out.iter().filter(|s| s.label == 1).map(|s| s.continuous[0] as usize).eq(0..100));

        let balanced = labelled(&[0, 1, 1, 0]);
        assert_eq!(undersample_majority(&balanced, 0).unwrap(), balanced);
        assert!(matches!(undersample_majority(&labelled(&[1, 1]), 0), Err(Error::SingleClass)));
    }

    #[test]
    fn undersample_replays() {
        let data = labelled(&[1, 0, 0, 1, 0, 0, 1, 0, 0, 0]);
        let a = undersample_majority(&data, 21).unwrap();
        let b = undersample_majority(&data, 21).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert_eq!(a.iter().filter(|s| s.label == 0).count(), 3);
    }

    #[test]
    fn standardize_examples() {
        let rows = [vec![3.0, 4.0], vec![7.0, 4.0]];
        let st = Standardizer::fit(rows.iter().map(|r| r.as_slice()), 2);
        assert_eq!(st.apply(&[7.0, 4.0]), vec![1.0, 4.0]);
        assert_eq!(st.apply(&[9.0, -2.0])[1], -2.0);
        let x = [0.123, 17.5];
        for (a, b) in st.invert(&st.apply(&x)).iter().zip(x) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn synth_conflict_bookkeeping() {
        let cfg = SynthConfig {
            n_samples: 500,
            conflict_rate: 1.0,
            seed: 5,
            ..SynthConfig::default()
        };
        let (samples, truth) = synth_generate(&cfg).unwrap();
        assert_eq!(samples.len(), 500);
        for i in 0..500 {
            let a = truth.modality_a[i].is_corrupted();
            let b = truth.modality_b[i].is_corrupted();
            assert!(a ^ b);
        }
    }

    #[test]
    fn synth_is_seeded() {
        let cfg = SynthConfig {
            n_samples: 50,
            seed: 8,
            ..SynthConfig::default()
        };
        let (a, ta) = synth_generate(&cfg).unwrap();
        let (b, tb) = synth_generate(&cfg).unwrap();
        assert_eq!(ta, tb);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.label, y.label);
            assert!(x.continuous.iter().zip(&y.continuous).all(|(p, q)| p.to_bits() == q.to_bits()));
            assert!(x.vector.iter().zip(&y.vector).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn synth_rejects_bad_config() {
        let bad = SynthConfig {
            reliability_a: 0.4,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_generate(&bad), Err(Error::Domain(_))));
        let bad = SynthConfig {
            conflict_rate: 1.5,
            ..SynthConfig::default()
        };
        assert!(synth_generate(&bad).is_err());
    }
}

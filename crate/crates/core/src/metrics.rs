//! Binary classification metrics, ROC AUC and evidence-score histograms.
//!
//! Ratios with a zero denominator are `None` and print as [`UNDEFINED`].

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const UNDEFINED: &str = "NA";
pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_lengths(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    Ok(())
}

/// Tallies predictions with `score > threshold` counted as positive.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    check_lengths(scores.len(), labels.len())?;
    if scores.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut c = ConfusionCounts::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s > threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Tallies already-decided labels.
pub fn confusion_from_predictions(predicted: &[bool], labels: &[u8]) -> Result<ConfusionCounts> {
    let scores: Vec<f64> = predicted.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect();
    confusion(&scores, labels, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub accuracy: Option<f64>,
    pub specificity: Option<f64>,
    pub sensitivity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics_from_confusion(c: &ConfusionCounts) -> ClassMetrics {
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let precision = ratio(c.tp, c.tp + c.fp);
    let f1 = match (precision, sensitivity) {
        (Some(p), Some(s)) if p + s > 0.0 => Some(2.0 * p * s / (p + s)),
        _ => None,
    };
    ClassMetrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        specificity: ratio(c.tn, c.tn + c.fp),
        sensitivity,
        precision,
        f1,
    }
}

/// ROC AUC by the trapezoidal rule over distinct score thresholds. Tied
/// scores form a single diagonal step, so the result equals the
/// Mann-Whitney statistic with ties counted one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // integrate in counts and divide once at the end
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area2 = 0u128;
    let mut i = 0;
    while i < order.len() {
        let (tp0, fp0) = (tp, fp);
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += ((fp - fp0) * (tp + tp0)) as u128;
    }
    Ok(area2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBins {
    /// `n_bins + 1` equally spaced edges from 0 to 1.
    pub edges: Vec<f64>,
    pub correct: Vec<usize>,
    pub wrong: Vec<usize>,
}

impl HistogramBins {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lower_edge,upper_edge,correct_count,wrong_count\n");
        for i in 0..self.correct.len() {
            let _ = writeln!(
                out,
                "{:.4},{:.4},{},{}",
                self.edges[i],
                self.edges[i + 1],
                self.correct[i],
                self.wrong[i]
            );
        }
        out
    }
}

/// Bin `i` covers `[i/n, (i+1)/n)`; the last bin also includes 1. Scores
/// outside `[0, 1]` are clamped into the end bins.
pub fn evidence_histogram(scores: &[f64], correct: &[bool], n_bins: usize) -> Result<HistogramBins> {
    check_lengths(scores.len(), correct.len())?;
    if n_bins == 0 {
        return Err(Error::Domain("histogram needs at least one bin".into()));
    }
    let edges = (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect();
    let mut bins = HistogramBins {
        edges,
        correct: vec![0; n_bins],
        wrong: vec![0; n_bins],
    };
    for (&s, &ok) in scores.iter().zip(correct) {
        let idx = ((s.clamp(0.0, 1.0) * n_bins as f64).floor() as usize).min(n_bins - 1);
        if ok {
            bins.correct[idx] += 1;
        } else {
            bins.wrong[idx] += 1;
        }
    }
    Ok(bins)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub dataset: String,
    pub seed: u64,
    pub method: String,
    pub counts: ConfusionCounts,
    pub metrics: ClassMetrics,
    /// `None` when the evaluated labels contain a single class.
    pub auc: Option<f64>,
}

pub const REPORT_HEADER: &str = "dataset,seed,method,acc,spec,sens,prec,f1,auc,tp,fp,tn,fn";

fn percent(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:.2}", 100.0 * x),
        None => UNDEFINED.to_string(),
    }
}

impl MetricsReport {
    /// Scores are thresholded at 0.5 and also ranked for the AUC.
    pub fn from_scores(dataset: &str, seed: u64, method: &str, scores: &[f64], labels: &[u8]) -> Result<Self> {
        Self::from_decisions(dataset, seed, method, scores, &confusion(scores, labels, 0.5)?, labels)
    }

    /// Counts come from explicit decisions; `scores` is used only for ranking.
    pub fn from_decisions(
        dataset: &str,
        seed: u64,
        method: &str,
        scores: &[f64],
        counts: &ConfusionCounts,
        labels: &[u8],
    ) -> Result<Self> {
        let auc = match auc(scores, labels) {
            Ok(v) => Some(v),
            Err(Error::SingleClass) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            dataset: dataset.to_string(),
            seed,
            method: method.to_string(),
            counts: *counts,
            metrics: metrics_from_confusion(counts),
            auc,
        })
    }

    pub fn csv_row(&self) -> String {
        let m = &self.metrics;
        let c = &self.counts;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.dataset,
            self.seed,
            self.method,
            percent(m.accuracy),
            percent(m.specificity),
            percent(m.sensitivity),
            percent(m.precision),
            percent(m.f1),
            percent(self.auc),
            c.tp,
            c.fp,
            c.tn,
            c.fn_
        )
    }
}

pub fn reports_to_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// One parsed report row, metric values in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub seed: u64,
    pub method: String,
    pub values: [Option<f64>; 6],
}

pub const METRIC_NAMES: [&str; 6] = ["acc", "spec", "sens", "prec", "f1", "auc"];

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != REPORT_HEADER {
        return Err(Error::Schema("report header does not match".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let parse_err = |column: &str, message: String| Error::Parse {
            row,
            column: column.to_string(),
            message,
        };
        let seed = rec[1].parse().map_err(|_| parse_err("seed", format!("bad seed `{}`", &rec[1])))?;
        let mut values = [None; 6];
        for (k, name) in METRIC_NAMES.iter().enumerate() {
            let field = &rec[3 + k];
            values[k] = if field == UNDEFINED {
                None
            } else {
                Some(field.parse().map_err(|_| parse_err(name, format!("bad value `{field}`")))?)
            };
        }
        rows.push(ReportRow {
            dataset: rec[0].to_string(),
            seed,
            method: rec[2].to_string(),
            values,
        });
    }
    Ok(rows)
}

/// Mean of each metric per (dataset, method) over seeds, in first-seen
/// order. A mean is undefined if any seed's value is.
pub fn summarize(rows: &[ReportRow]) -> String {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let k = (r.dataset.as_str(), r.method.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut out = format!("dataset,method,n_seeds,{}\n", METRIC_NAMES.join(","));
    for (dataset, method) in keys {
        let group: Vec<&ReportRow> = rows
            .iter()
            .filter(|r| r.dataset == dataset && r.method == method)
            .collect();
        let _ = write!(out, "{dataset},{method},{}", group.len());
        for k in 0..METRIC_NAMES.len() {
            let vals: Option<Vec<f64>> = group.iter().map(|r| r.values[k]).collect();
            match vals {
                Some(v) => {
                    let _ = write!(out, ",{:.2}", v.iter().sum::<f64>() / v.len() as f64);
                }
                None => {
                    let _ = write!(out, ",{UNDEFINED}");
                }
            }
        }
        out.push('\n');
    }
    out
}

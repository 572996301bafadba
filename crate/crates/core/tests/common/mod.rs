//! Independent reference implementations used by several test targets.
#![allow(dead_code)]

use evifuse::nn::ParamSet;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative errors of near-zero gradients.
pub const REL_FLOOR: f64 = 1e-6;

pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Compares `analytic` against central differences of `loss`, one scalar
/// parameter at a time. Coordinates whose perturbation changes `pattern`
/// (the ReLU activation signs) are skipped because the loss is not
/// differentiable across that boundary.
pub fn finite_difference_check<P: ParamSet>(
    params: &P,
    analytic: &P,
    loss: impl Fn(&P) -> f64,
    pattern: impl Fn(&P) -> Vec<bool>,
) -> FdReport {
    let base_pattern = pattern(params);
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.to_vec()).collect();
    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (ti, g) in grads.iter().enumerate() {
        for (j, &a) in g.iter().enumerate() {
            let mut plus = params.clone();
            plus.tensors_mut()[ti][j] += FD_STEP;
            let mut minus = params.clone();
            minus.tensors_mut()[ti][j] -= FD_STEP;
            if pattern(&plus) != base_pattern || pattern(&minus) != base_pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    report
}

/// Cross-entropy of a logistic output computed from the logit.
pub fn ce_from_logit(z: f64, y: u8) -> f64 {
    // softplus(-z) for y = 1, softplus(z) for y = 0
    let s = if y == 1 { -z } else { z };
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

/// Mann-Whitney statistic by enumerating all positive/negative pairs.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj == 1 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Focal sets of the binary frame as bitmasks: T, F, U.
const SETS: [u8; 3] = [0b01, 0b10, 0b11];

/// Dempster combination of any number of `(t, f, u)` masses by enumerating
/// every tuple of focal elements, intersecting them and renormalizing.
pub fn enumerate_combination(masses: &[[f64; 3]]) -> Option<[f64; 3]> {
    let mut acc = [0.0; 4];
    let n = masses.len();
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let mut set = 0b11u8;
        let mut w = 1.0;
        for m in masses {
            let k = c % 3;
            c /= 3;
            set &= SETS[k];
            w *= m[k];
        }
        acc[set as usize] += w;
    }
    let norm = acc[1] + acc[2] + acc[3];
    (norm > 1e-12).then(|| [acc[1] / norm, acc[2] / norm, acc[3] / norm])
}

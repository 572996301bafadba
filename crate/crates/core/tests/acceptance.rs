//! One pass/fail line per acceptance criterion. Run with
//! `cargo test -p evifuse --test acceptance -- --nocapture` to see the table.
mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{ce_from_logit, finite_difference_check, pairwise_auc};
use evifuse::backbones::*;
use evifuse::config::KeyValues;
use evifuse::dst::*;
use evifuse::evidence::*;
use evifuse::harness::{run_experiment, ExperimentConfig, REPORT_FILE};
use evifuse::metrics::auc;
use evifuse::nn::{logistic, ParamSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn max_diff(a: &BinaryMass, b: &BinaryMass) -> f64 {
    a.as_array().iter().zip(b.as_array()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_mass(rng: &mut ChaCha8Rng) -> BinaryMass {
    // s stays below 1 so no pair is in total conflict
    calibrated_mass(rng.random_range(0.0..=1.0), rng.random_range(0.0..0.999)).unwrap()
}

fn combiner_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut general, mut assoc, mut comm) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let (a, b, c) = (random_mass(&mut rng), random_mass(&mut rng), random_mass(&mut rng));
        let ab = combine_pair(&a, &b).unwrap();
        let g = combine_general(&GeneralMass::from_binary(&a), &GeneralMass::from_binary(&b))
            .unwrap()
            .to_binary()
            .unwrap();
        general = general.max(max_diff(&ab, &g));
        comm = comm.max(max_diff(&ab, &combine_pair(&b, &a).unwrap()));
        let left = combine_pair(&ab, &c).unwrap();
        let right = combine_pair(&a, &combine_pair(&b, &c).unwrap()).unwrap();
        assoc = assoc.max(max_diff(&left, &right));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: 1,
        name: "combiner oracle equivalence",
        pass: general <= 1e-12 && comm <= 1e-12 && assoc <= 1e-9 && secs < 5.0,
        detail: format!("general {general:.1e}, commutativity {comm:.1e}, associativity {assoc:.1e}, {secs:.2}s"),
    }
}

fn worked_value() -> Outcome {
    let a = BinaryMass::new(0.72, 0.08, 0.20).unwrap();
    let b = BinaryMass::new(0.18, 0.42, 0.40).unwrap();
    let fused = combine_pair(&a, &b).unwrap();
    let m = conflict(&a, &b).normalization;
    let expected = [0.66393, 0.21897, 0.11710];
    let err = fused
        .as_array()
        .iter()
        .zip(expected)
        .map(|(x, y)| (x - y).abs())
        .fold((m - 0.6832).abs(), f64::max);
    Outcome {
        id: 2,
        name: "worked fusion value",
        pass: err <= 1e-5,
        detail: format!("fused {:.5?}, M {m:.4}, max error {err:.1e}", fused.as_array()),
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn gradient_fidelity() -> Outcome {
    let mut worst = [0.0f64; 3];
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);

        let dim = rng.random_range(2..10);
        let net = EvidenceNetParams::init(dim, 8, seed);
        let x = random_vec(&mut rng, dim);
        let target = (seed % 2) as f64;
        let (_, cache) = evidence_forward(&net, &x).unwrap();
        let grad = evidence_backward(&net, &cache, target, 0.0).unwrap();
        let r = finite_difference_check(
            &net,
            &grad,
            |p| (evidence_forward(p, &x).unwrap().0 - target).abs(),
            |p| evidence_forward(p, &x).unwrap().1.activation_pattern(),
        );
        worst[0] = worst[0].max(r.max_rel_error);

        let cards = [3, 2];
        let fc = FcNetParams::init(&cards, 3, 6, seed);
        let codes = vec![rng.random_range(0..3), rng.random_range(0..2)];
        let cont = random_vec(&mut rng, 3);
        let y = (seed % 2) as u8;
        let (out, cache) = fcnet_forward_cached(&fc, &codes, &cont).unwrap();
        let mut grad = fc.zeros_like();
        fcnet_backward(&fc, &cache, &codes, &cont, logistic(out.logit) - f64::from(y), None, &mut grad);
        let r = finite_difference_check(
            &fc,
            &grad,
            |p| ce_from_logit(fcnet_forward(p, &codes, &cont).unwrap().logit, y),
            |p| fcnet_forward_cached(p, &codes, &cont).unwrap().1.activation_pattern(),
        );
        worst[1] = worst[1].max(r.max_rel_error);

        let head = FusionHeadParams::init(&[4, 3], FUSION_WIDTH, seed);
        let (fa, fb) = (random_vec(&mut rng, 4), random_vec(&mut rng, 3));
        let (out, cache) = fusion_forward_cached(&head, &[&fa, &fb]).unwrap();
        let mut grad = head.zeros_like();
        fusion_backward(&head, &cache, logistic(out.logit) - f64::from(y), &mut grad);
        let r = finite_difference_check(
            &head,
            &grad,
            |p| ce_from_logit(fusion_forward(p, &[&fa, &fb]).unwrap().logit, y),
            |_| Vec::new(),
        );
        worst[2] = worst[2].max(r.max_rel_error);
    }
    Outcome {
        id: 3,
        name: "gradient fidelity",
        pass: worst.iter().all(|&e| e < 1e-4),
        detail: format!(
            "max rel error: evidence {:.1e}, fcnet {:.1e}, fusion head {:.1e}",
            worst[0], worst[1], worst[2]
        ),
    }
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for set in 0..200 {
        let n = rng.random_range(2..=500);
        // every other set uses a coarse grid so ties are frequent
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = rng.random_range(0.0..1.0);
                if set % 2 == 0 { (s * 10.0).floor() / 10.0 } else { s }
            })
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        worst = worst.max((auc(&scores, &labels).unwrap() - pairwise_auc(&scores, &labels)).abs());
    }
    let fixture = auc(&[0.9, 0.8, 0.7, 0.1], &[1, 0, 1, 0]).unwrap();
    Outcome {
        id: 4,
        name: "metrics oracle",
        pass: worst <= 1e-12 && fixture == 0.75,
        detail: format!("max |trapezoid - pairwise| {worst:.1e} over 200 sets, fixture {fixture}"),
    }
}

const BENCHMARK: &str = "dataset = conflict-benchmark
data.source = synthetic
synth.n_samples = 4000
synth.reliability_a = 0.9
synth.reliability_b = 0.65
synth.conflict_rate = 0.3
seeds = 0,1,2,3,4
";

fn synthetic_benchmark(out_dir: &Path) -> Vec<Outcome> {
    let text = format!("{BENCHMARK}out_dir = {}\n", out_dir.display());
    let config = ExperimentConfig::from_key_values(KeyValues::parse(&text).unwrap(), Path::new(".")).unwrap();
    let evals = run_experiment(&config).unwrap();
    let k = evals.len() as f64;

    // method order: branch_a, branch_b, concat, average, dst
    let mut acc = [0.0; 5];
    let mut disagree = [0.0; 5];
    let mut disagree_n = 0;
    let mut separation = [0.0; 3];
    for e in &evals {
        for (m, r) in e.reports.iter().enumerate() {
            acc[m] += 100.0 * r.metrics.accuracy.unwrap() / k;
        }
        let (n, d) = e.disagreement_accuracy().unwrap();
        disagree_n += n;
        for m in 0..5 {
            disagree[m] += 100.0 * d[m] / k;
        }
        for (b, sep) in separation.iter_mut().enumerate() {
            let (mut right, mut wrong) = (Vec::new(), Vec::new());
            for (p, &y) in e.predictions.iter().zip(&e.labels) {
                let correct = (p.probabilities[b] > 0.5) == (y == 1);
                if correct { right.push(p.evidence[b]) } else { wrong.push(p.evidence[b]) }
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            *sep += (mean(&right) - mean(&wrong)) / k;
        }
    }
    let (concat, average, dst) = (acc[2], acc[3], acc[4]);
    vec![
        Outcome {
            id: 5,
            name: "DST beats average fusion under conflict",
            pass: dst - average >= 1.0,
            detail: format!("dst {dst:.2} vs average {average:.2} ({:+.2} points)", dst - average),
        },
        Outcome {
            id: 6,
            name: "DST improves on concat fusion under conflict",
            pass: dst >= concat && disagree[4] - disagree[2] >= 0.5,
            detail: format!(
                "dst {dst:.2} vs concat {concat:.2}; disagreement subset ({disagree_n} samples) {:.2} vs {:.2}",
                disagree[4], disagree[2]
            ),
        },
        Outcome {
            id: 7,
            name: "evidence-score separation",
            pass: separation.iter().all(|&s| s >= 0.2),
            detail: format!(
                "correct minus wrong mean evidence: a {:.3}, b {:.3}, fusion {:.3}",
                separation[0], separation[1], separation[2]
            ),
        },
    ]
}

fn determinism(root: &Path) -> Outcome {
    let config = root.join("small.cfg");
    fs::write(
        &config,
        "data.source = synthetic\nsynth.n_samples = 1200\nstage1.epochs = 100\nevidence.epochs = 10\nseeds = 0,1\n",
    )
    .unwrap();
    let run = |name: &str| {
        let out_dir = root.join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_evifuse"))
            .args(["run", "--config", config.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        fs::read(out_dir.join(REPORT_FILE)).unwrap()
    };
    let (first, second) = (run("first"), run("second"));
    Outcome {
        id: 8,
        name: "determinism",
        pass: first == second && !first.is_empty(),
        detail: format!("two `run` invocations, report.csv {} bytes each, identical: {}", first.len(), first == second),
    }
}

fn non_reproducibility() -> Outcome {
    Outcome {
        id: 9,
        name: "non-reproducibility statement",
        pass: true,
        detail: "absolute knee-cohort figures (e.g. image-only accuracy 82.08) are not reproduced: they need \
                 restricted MRI data and a GPU-trained 3D CNN. Criteria 5 to 7 substitute property checks \
                 on the synthetic conflict benchmark."
            .into(),
    }
}

#[test]
fn acceptance_criteria() {
    let scratch = tempfile::tempdir().unwrap();
    let mut outcomes = vec![combiner_oracle(), worked_value(), gradient_fidelity(), metrics_oracle()];
    outcomes.extend(synthetic_benchmark(&scratch.path().join("benchmark")));
    outcomes.push(determinism(scratch.path()));
    outcomes.push(non_reproducibility());

    for o in &outcomes {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("[{verdict}] criterion {}: {}: {}", o.id, o.name, o.detail);
    }
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

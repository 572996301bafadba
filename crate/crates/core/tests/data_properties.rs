use evifuse::data::*;
use evifuse::evidence::{balance_by_duplication, EvidenceTarget};
use proptest::prelude::*;

fn samples_from(labels: &[u8]) -> Vec<Sample> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| Sample {
            codes: vec![i % 3],
            continuous: vec![i as f64, (i * i) as f64 * 0.01],
            vector: vec![-(i as f64)],
            label,
        })
        .collect()
}

proptest! {
    #[test]
    fn split_partitions_and_stratifies(labels in prop::collection::vec(0u8..2, 10..400), seed in any::<u64>()) {
        let samples = samples_from(&labels);
        let s = split_80_10_10(&samples, seed).unwrap();
        let n = labels.len();
        let tenth = (n + 5) / 10;
        prop_assert_eq!(s.test.len(), tenth);
        prop_assert_eq!(s.validation.len(), tenth);
        prop_assert_eq!(s.train.len(), n - 2 * tenth);
        let mut all: Vec<usize> = s.train_idx.iter().chain(&s.validation_idx).chain(&s.test_idx).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        // held-out positive counts stay within one of the overall share
        let share = labels.iter().filter(|&&y| y == 1).count() as f64 / n as f64;
        for part in [&s.test, &s.validation] {
            let pos = part.iter().filter(|x| x.label == 1).count() as f64;
            prop_assert!((pos - share * part.len() as f64).abs() <= 1.0 + 1e-9);
        }
        prop_assert_eq!(split_80_10_10(&samples, seed).unwrap(), s);
    }

    #[test]
    fn undersampling_reaches_parity(labels in prop::collection::vec(0u8..2, 2..300), seed in any::<u64>()) {
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let samples = samples_from(&labels);
        let out = undersample_majority(&samples, seed).unwrap();
        let pos = out.iter().filter(|s| s.label == 1).count();
        prop_assert_eq!(2 * pos, out.len());
        let minority = labels.iter().filter(|&&y| y == 1).count().min(labels.iter().filter(|&&y| y == 0).count());
        prop_assert_eq!(pos, minority);
        // kept samples appear in their original relative order
        let idx: Vec<f64> = out.iter().map(|s| s.continuous[0]).collect();
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn balancing_reaches_parity(flags in prop::collection::vec(any::<bool>(), 1..200), seed in any::<u64>()) {
        let targets: Vec<EvidenceTarget> = flags
            .iter()
            .map(|&f| if f { EvidenceTarget::Reliable } else { EvidenceTarget::Unreliable })
            .collect();
        let features: Vec<Vec<f64>> = (0..flags.len()).map(|i| vec![i as f64]).collect();
        let b = balance_by_duplication(&features, &targets, seed).unwrap();
        let rel = b.targets.iter().filter(|t| **t == EvidenceTarget::Reliable).count();
        let unrel = b.targets.len() - rel;
        if b.single_class {
            prop_assert_eq!(b.targets.len(), flags.len());
        } else {
            prop_assert_eq!(rel, unrel);
            // originals first, then copies of minority rows only
            prop_assert_eq!(&b.features[..flags.len()], &features[..]);
            let minority = if flags.iter().filter(|&&f| f).count() * 2 < flags.len() {
                EvidenceTarget::Reliable
            } else {
                EvidenceTarget::Unreliable
            };
            for (x, t) in b.features[flags.len()..].iter().zip(&b.targets[flags.len()..]) {
                prop_assert_eq!(*t, minority);
                prop_assert_eq!(targets[x[0] as usize], minority);
            }
        }
    }

    #[test]
    fn standardizer_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..50)) {
        let st = Standardizer::fit(rows.iter().map(Vec::as_slice), 3);
        for r in &rows {
            let back = st.invert(&st.apply(r));
            for (a, b) in back.iter().zip(r) {
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
            }
        }
        for j in 0..3 {
            let z: Vec<f64> = rows.iter().map(|r| st.apply(r)[j]).collect();
            let mean = z.iter().sum::<f64>() / z.len() as f64;
            prop_assert!(mean.abs() < 1e-9);
        }
    }
}

#[test]
fn constant_column_passes_through() {
    let rows = [vec![5.0, 1.0], vec![5.0, 3.0]];
    let st = Standardizer::fit(rows.iter().map(Vec::as_slice), 2);
    assert_eq!(st.apply(&[5.0, 2.0]), vec![5.0, 0.0]);
}

#[test]
fn synthetic_corruption_rates() {
    let cfg = SynthConfig {
        n_samples: 20_000,
        seed: 3,
        ..SynthConfig::default()
    };
    let (samples, truth) = synth_generate(&cfg).unwrap();
    let n = samples.len() as f64;
    let forced = truth.forced_conflict.iter().filter(|&&f| f).count() as f64 / n;
    assert!((forced - 0.3).abs() < 0.02, "{forced}");
    let pos = samples.iter().filter(|s| s.label == 1).count() as f64 / n;
    assert!((pos - 0.5).abs() < 0.02);
    // unforced rows: each modality corrupted with probability 1 - reliability
    let unforced: Vec<usize> = (0..samples.len()).filter(|&i| !truth.forced_conflict[i]).collect();
    let rate = |v: &[Corruption]| unforced.iter().filter(|&&i| v[i].is_corrupted()).count() as f64 / unforced.len() as f64;
    assert!((rate(&truth.modality_a) - 0.1).abs() < 0.02);
    assert!((rate(&truth.modality_b) - 0.35).abs() < 0.02);
    // forced rows: exactly one wrong-label modality
    for i in (0..samples.len()).filter(|&i| truth.forced_conflict[i]) {
        let wrong = [truth.modality_a[i], truth.modality_b[i]]
            .iter()
            .filter(|&&c| c == Corruption::WrongLabel)
            .count();
        assert_eq!(wrong, 1);
    }
}

//! Folds, labelled splits and device partitions.

use std::collections::BTreeSet;

use fedser_core::data::*;
use fedser_core::features::FeatureTensor;
use proptest::prelude::*;

fn tiny(counts: &[usize], speakers: usize) -> Dataset {
    let mut samples = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for i in 0..n {
            let s = i % speakers;
            samples.push(Utterance {
                id: format!("{c}-{i}"),
                speaker: format!("spk{s}"),
                session: format!("ses{}", s / 2),
                label: c,
                segments: vec![FeatureTensor::filled(4, 4, 0.0)],
            });
        }
    }
    Dataset::new(
        samples,
        (0..counts.len()).map(|c| format!("c{c}")).collect(),
    )
    .unwrap()
}

fn kfold(seed: u64) -> PartitionConfig {
    PartitionConfig {
        fold_strategy: FoldStrategy::KFold,
        seed,
        ..Default::default()
    }
}

#[test]
fn synthetic_dataset_shape_and_determinism() {
    let spec = SynthSpec::default();
    let a = synth_dataset(&spec).unwrap();
    assert_eq!(a.len(), 400);
    assert_eq!(a.class_counts(&(0..400).collect::<Vec<_>>()), vec![100; 4]);
    assert_eq!(a.speakers().len(), 8);
    assert_eq!(a.sessions().len(), 4);
    assert_eq!(a.class_names, ["neutral", "happy", "sad", "angry"]);
    assert_eq!(a, synth_dataset(&spec).unwrap());
    assert_ne!(
        a,
        synth_dataset(&SynthSpec {
            seed: 1,
            ..spec.clone()
        })
        .unwrap()
    );
    assert!(synth_dataset(&SynthSpec {
        num_classes: 1,
        ..spec
    })
    .is_err());
}

#[test]
fn dataset_validation() {
    let seg = vec![FeatureTensor::filled(4, 4, 0.0)];
    let u = |label| Utterance {
        id: "x".into(),
        speaker: "s".into(),
        session: "t".into(),
        label,
        segments: seg.clone(),
    };
    assert!(Dataset::new(vec![u(0), u(2)], vec!["a".into(), "b".into()]).is_err());
    assert!(Dataset::new(vec![u(0), u(0)], vec!["a".into(), "b".into()]).is_err());
    assert!(Dataset::new(vec![u(0), u(1)], vec!["a".into(), "b".into()]).is_ok());
}

#[test]
fn loso_folds_hold_out_whole_sessions() {
    let ds = synth_dataset(&SynthSpec {
        samples_per_class: 20,
        ..Default::default()
    })
    .unwrap();
    let folds = make_folds(&ds, &PartitionConfig::default()).unwrap();
    assert_eq!(folds.len(), 4);
    for f in &folds {
        let spk = |ids: &[usize]| {
            ids.iter()
                .map(|&i| ds.samples[i].speaker.clone())
                .collect::<BTreeSet<_>>()
        };
        assert!(spk(&f.train).is_disjoint(&spk(&f.test)));
        assert_eq!(f.train.len() + f.test.len(), ds.len());
    }
    let one = tiny(&[3, 3], 2);
    assert!(make_folds(&one, &PartitionConfig::default()).is_err());
}

#[test]
fn kfold_is_stratified() {
    let ds = tiny(&[25, 25, 25, 25], 4);
    for f in make_folds(&ds, &kfold(3)).unwrap() {
        assert_eq!(f.test.len(), 20);
    }
    let ds = tiny(&[40, 30, 20, 10], 4);
    for seed in 0..20 {
        let folds = make_folds(&ds, &kfold(seed)).unwrap();
        assert_eq!(folds.len(), 5);
        let mut seen = vec![0; 100];
        for f in &folds {
            for (got, want) in ds.class_counts(&f.test).iter().zip([8, 6, 4, 2]) {
                assert!(got.abs_diff(want) <= 1, "{got} vs {want}");
            }
            f.test.iter().for_each(|&i| seen[i] += 1);
        }
        assert!(seen.iter().all(|&s| s == 1));
    }
}

#[test]
fn split_examples() {
    let ds = tiny(&[10, 10, 10, 10], 2);
    let ids: Vec<usize> = (0..40).collect();
    let s = split_labeled(&ds, &ids, 0.1, 0).unwrap();
    assert_eq!(ds.class_counts(&s.labeled), vec![1; 4]);
    assert_eq!(s.unlabeled.len(), 36);
    let all = split_labeled(&ds, &ids, 1.0, 0).unwrap();
    assert!(all.unlabeled.is_empty());
    let few = split_labeled(&ds, &ids[..12], 0.1, 0).unwrap();
    assert_eq!(few.labeled.len(), 1);
    assert!(!few.unlabeled_classes.is_empty());
    assert!(split_labeled(&ds, &ids, 0.0, 0).is_err());
}

proptest! {
    #[test]
    fn split_preserves_class_ratios(
        counts in proptest::collection::vec(1usize..40, 2..6),
        frac in 0.01f64..=1.0,
        seed in any::<u64>(),
    ) {
        let ds = tiny(&counts, 3);
        let ids: Vec<usize> = (0..ds.len()).collect();
        let s = split_labeled(&ds, &ids, frac, seed).unwrap();
        prop_assert_eq!(s.labeled.len(), (frac * ds.len() as f64).round() as usize);
        for (c, &n) in ds.class_counts(&s.labeled).iter().enumerate() {
            prop_assert!((n as f64 - frac * counts[c] as f64).abs() <= 1.0 + 1e-9);
        }
        let mut both: Vec<usize> = s.labeled.iter().chain(&s.unlabeled).copied().collect();
        both.sort_unstable();
        prop_assert_eq!(both, ids.clone());
        prop_assert_eq!(s, split_labeled(&ds, &ids, frac, seed).unwrap());
    }
}

#[test]
fn random_partition_sizes() {
    let ds = tiny(&[25, 25, 25, 25], 4);
    let ids: Vec<usize> = (0..100).collect();
    let cfg = PartitionConfig {
        sigma: 0.0,
        labeled_fraction: 0.2,
        ..Default::default()
    };
    let plan = assign_devices(&ds, 0, &ids, &[], 10, &cfg).unwrap();
    assert!(plan.devices.iter().all(|d| d.len() == 10));
    assert!(plan.devices.iter().all(|d| d.labeled.len() == 2));
    plan.validate(100).unwrap();

    let ds = tiny(&[250; 4], 8);
    let ids: Vec<usize> = (0..1000).collect();
    let mut cvs = Vec::new();
    for seed in 0..50 {
        let cfg = PartitionConfig {
            sigma: 25.0,
            seed,
            ..Default::default()
        };
        let plan = assign_devices(&ds, 0, &ids, &[], 10, &cfg).unwrap();
        let sizes: Vec<f64> = plan.devices.iter().map(|d| d.len() as f64).collect();
        assert_eq!(sizes.iter().sum::<f64>(), 1000.0);
        let mean = sizes.iter().sum::<f64>() / 10.0;
        let sd = (sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / 9.0).sqrt();
        cvs.push(sd / mean);
    }
    let cv = cvs.iter().sum::<f64>() / cvs.len() as f64;
    assert!(
        (0.15..=0.35).contains(&cv),
        "mean coefficient of variation {cv}"
    );
}

#[test]
fn plans_are_disjoint_and_exhaustive() {
    let ds = synth_dataset(&SynthSpec {
        samples_per_class: 40,
        ..Default::default()
    })
    .unwrap();
    for seed in 0..20 {
        for mode in [PartitionMode::Random, PartitionMode::PerSpeaker] {
            for strategy in [FoldStrategy::Loso, FoldStrategy::KFold] {
                let cfg = PartitionConfig {
                    mode,
                    fold_strategy: strategy,
                    seed,
                    ..Default::default()
                };
                for (i, f) in make_folds(&ds, &cfg).unwrap().iter().enumerate() {
                    let k = if mode == PartitionMode::PerSpeaker {
                        6
                    } else {
                        5
                    };
                    let plan = assign_devices(&ds, i, &f.train, &f.test, k, &cfg).unwrap();
                    plan.validate(ds.len()).unwrap();
                    assert_eq!(
                        plan,
                        assign_devices(&ds, i, &f.train, &f.test, k, &cfg).unwrap()
                    );
                    if mode == PartitionMode::PerSpeaker {
                        let mut seen = BTreeSet::new();
                        for d in &plan.devices {
                            for id in d.labeled.iter().chain(&d.unlabeled) {
                                assert!(d.speakers.contains(&ds.samples[*id].speaker));
                            }
                            for s in &d.speakers {
                                assert!(seen.insert(s.clone()), "speaker {s} on two devices");
                            }
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn per_speaker_needs_enough_speakers() {
    let ds = synth_dataset(&SynthSpec {
        samples_per_class: 16,
        ..Default::default()
    })
    .unwrap();
    let cfg = PartitionConfig {
        mode: PartitionMode::PerSpeaker,
        fold_strategy: FoldStrategy::KFold,
        ..Default::default()
    };
    let f = &make_folds(&ds, &cfg).unwrap()[0];
    let plan = assign_devices(&ds, 0, &f.train, &f.test, 8, &cfg).unwrap();
    assert!(plan.devices.iter().all(|d| d.speakers.len() == 1));
    assert!(assign_devices(&ds, 0, &f.train, &f.test, 9, &cfg).is_err());
}

use fedser::config::{DataSource, ExperimentConfig};
use fedser::core::data::{FoldStrategy, PartitionMode, SynthSpec};
use fedser::core::federation::Sequential;
use fedser::core::model::ArchConfig;
use fedser::experiment::{run_experiment, MetricRecord, Summary, TrialReport};
use fedser::formats::read_json;

fn tiny(out: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        name: "tiny".into(),
        trials: 2,
        folds: Some(vec![0, 2]),
        output_dir: out.to_path_buf(),
        workers: 1,
        data: DataSource::Synthetic(SynthSpec {
            samples_per_class: 16,
            speakers: 4,
            frames: 8,
            mel_bins: 8,
            ..Default::default()
        }),
        arch: ArchConfig {
            channels: vec![4, 8],
            groups: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    cfg.partition.mode = PartitionMode::PerSpeaker;
    cfg.partition.fold_strategy = FoldStrategy::KFold;
    cfg.partition.k = 4;
    cfg.federation.num_devices = 3;
    cfg.federation.rounds = 5;
    cfg.federation.eval_every = 2;
    cfg
}

#[test]
fn curves_records_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let s = run_experiment(&cfg, &Sequential).unwrap();
    assert!(s.complete);
    assert_eq!(s.folds.len(), 2);
    assert_eq!(s.folds[1].fold, 2);

    let rep: TrialReport = read_json(&dir.path().join("fold02/trial01/report.json")).unwrap();
    let rounds: Vec<u32> = rep.ua_curve.iter().map(|c| c.0).collect();
    assert_eq!(rounds, vec![1, 3, 4]);
    assert_eq!(rep.metrics.confusion.total() as usize, 16);

    let text = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    let recs: Vec<MetricRecord> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let rounds = recs
        .iter()
        .filter(|r| matches!(r, MetricRecord::Round { .. }))
        .count();
    let trials = recs
        .iter()
        .filter(|r| matches!(r, MetricRecord::Trial { .. }))
        .count();
    let devices = recs
        .iter()
        .filter(|r| matches!(r, MetricRecord::Device { .. }))
        .count();
    assert_eq!((rounds, trials), (2 * 2 * 5, 4));
    assert!(devices >= rounds);

    let back: Summary = read_json(&dir.path().join("summary.json")).unwrap();
    assert_eq!(back, s);
    let resolved = ExperimentConfig::load(&dir.path().join("config.resolved.toml")).unwrap();
    assert_eq!(resolved, cfg);
}

#[test]
fn failed_trial_is_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.folds = Some(vec![0]);
    cfg.federation.num_devices = 4;
    cfg.partition.fold_strategy = FoldStrategy::Loso;
    let err = run_experiment(&cfg, &Sequential);
    let s = err.unwrap();
    assert!(!s.complete);
    assert_eq!(s.failures.len(), 2);
    assert!(
        s.failures[0].error.contains("speaker"),
        "{}",
        s.failures[0].error
    );
}

//! Multi-fold, multi-trial experiment driver.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fedser_core::data::{
    assign_devices, make_folds, synth_dataset, Dataset, PartitionConfig, PartitionPlan,
};
use fedser_core::features::standardize;
use fedser_core::federation::{run_federation, Executor, FederationConfig, RoundRecord};
use fedser_core::metrics::{
    compare_runs, evaluate, mean_std, DeltaReport, FoldResult, MetricsReport,
};
use fedser_core::model::{InputShape, Network, ParamSet};
use fedser_core::rng::derive_seed;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig};
use crate::error::{Error, Result};
use crate::formats::{read_json, write_json, write_params, PlanRecord};
use crate::manifest::{load_manifest, ManifestOptions};

const PARTITION_TAG: u64 = 0x9a27;

/// Builds the dataset a config describes.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let mut ds = match &cfg.data {
        DataSource::Synthetic(spec) => synth_dataset(spec)?,
        DataSource::Manifest {
            path,
            permissive,
            classes,
        } => {
            let mut opts = ManifestOptions {
                features: cfg.features.clone(),
                permissive: *permissive,
                ..Default::default()
            };
            if let Some(c) = classes {
                opts.classes = c.clone();
            }
            load_manifest(path, &opts)?.0
        }
    };
    if cfg.features.normalize {
        let lens: Vec<usize> = ds.samples.iter().map(|u| u.segments.len()).collect();
        let mut segs: Vec<_> = ds
            .samples
            .iter_mut()
            .flat_map(|u| u.segments.drain(..))
            .collect();
        standardize(&mut segs);
        let mut it = segs.into_iter();
        for (u, n) in ds.samples.iter_mut().zip(lens) {
            u.segments = it.by_ref().take(n).collect();
        }
    }
    Ok(ds)
}

pub fn network_for(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Network> {
    let (frames, mel_bins) = ds.segment_shape();
    Ok(Network::new(
        cfg.arch.clone(),
        InputShape { frames, mel_bins },
        ds.num_classes(),
    )?)
}

/// Partition settings of one trial: folds are shared by all trials, device
/// assignment and labelled split vary with the trial seed.
pub fn trial_partition(cfg: &ExperimentConfig, seed: u64) -> PartitionConfig {
    PartitionConfig {
        seed: derive_seed(seed, &[PARTITION_TAG]),
        ..cfg.partition.clone()
    }
}

pub fn build_plan(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    fold: usize,
    seed: u64,
) -> Result<PartitionPlan> {
    let folds = make_folds(ds, &cfg.partition)?;
    let f = folds.get(fold).ok_or_else(|| {
        Error::Config(format!("fold {fold} requested, {} available", folds.len()))
    })?;
    let plan = assign_devices(
        ds,
        fold,
        &f.train,
        &f.test,
        cfg.federation.num_devices,
        &trial_partition(cfg, seed),
    )?;
    plan.validate(ds.len())?;
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub fold: usize,
    pub trial: usize,
    pub seed: u64,
    pub metrics: MetricsReport,
    /// `(round, UA)` at every evaluated round.
    pub ua_curve: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub trial_ua: Vec<f64>,
    pub mean_ua: f64,
    pub std_ua: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub fold: usize,
    pub trial: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub num_params: usize,
    pub folds: Vec<FoldSummary>,
    /// Mean and standard deviation of per-trial UA pooled over folds.
    pub mean_ua: f64,
    pub std_ua: f64,
    pub complete: bool,
    pub failures: Vec<Failure>,
}

impl Summary {
    pub fn fold_results(&self) -> Vec<FoldResult> {
        self.folds
            .iter()
            .map(|f| FoldResult {
                fold: f.fold,
                num_classes: self.num_classes,
                trial_ua: f.trial_ua.clone(),
            })
            .collect()
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricRecord {
    Device {
        fold: usize,
        trial: usize,
        round: u32,
        device: usize,
        samples: usize,
        weight: f64,
        tau: f64,
        retained_fraction: f64,
        mean_confidence: f64,
        supervised_loss: f64,
        unsupervised_loss: f64,
        steps: usize,
        skipped: bool,
    },
    Round {
        fold: usize,
        trial: usize,
        round: u32,
        participants: Vec<usize>,
        ua: Option<f64>,
    },
    Trial {
        fold: usize,
        trial: usize,
        ua: f64,
        accuracy: f64,
        segment_accuracy: f64,
    },
}

fn round_records(fold: usize, trial: usize, r: &RoundRecord) -> Vec<MetricRecord> {
    let mut out: Vec<MetricRecord> = r
        .participants
        .iter()
        .zip(&r.devices)
        .zip(r.samples.iter().zip(&r.weights))
        .map(|((&device, s), (&samples, &weight))| MetricRecord::Device {
            fold,
            trial,
            round: r.round,
            device,
            samples,
            weight,
            tau: s.tau,
            retained_fraction: s.retained_fraction,
            mean_confidence: s.mean_confidence,
            supervised_loss: s.supervised_loss,
            unsupervised_loss: s.unsupervised_loss,
            steps: s.steps,
            skipped: s.skipped,
        })
        .collect();
    out.push(MetricRecord::Round {
        fold,
        trial,
        round: r.round,
        participants: r.participants.clone(),
        ua: r.ua,
    });
    out
}

struct JsonLines {
    path: PathBuf,
    w: BufWriter<File>,
}

impl JsonLines {
    fn create(path: PathBuf) -> Result<Self> {
        let w = BufWriter::new(File::create(&path).map_err(Error::io(&path))?);
        Ok(Self { path, w })
    }

    fn push<T: Serialize>(&mut self, rec: &T) -> Result<()> {
        serde_json::to_writer(&mut self.w, rec).map_err(|source| Error::Json {
            path: self.path.clone(),
            source,
        })?;
        self.w.write_all(b"\n").map_err(Error::io(&self.path))
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(Error::io(&self.path))
    }
}

/// Runs one fold of one trial, writing its plan, checkpoints, final model
/// and report under `dir`.
pub fn run_trial<E: Executor>(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    net: &Network,
    fold: usize,
    trial: usize,
    seed: u64,
    exec: &E,
    dir: &Path,
    mut on_record: impl FnMut(&MetricRecord) -> Result<()>,
) -> Result<TrialReport> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let plan = build_plan(cfg, ds, fold, seed)?;
    write_json(&dir.join("plan.json"), &PlanRecord::new(&plan, ds))?;
    let fcfg = FederationConfig {
        seed,
        ..cfg.federation.clone()
    };
    let mut curve = Vec::new();
    let mut io_error = None;
    let state =
        run_federation::<f32, _>(net, ds, &plan, &fcfg, &cfg.selftrain, exec, |r, params| {
            let mut step = || -> Result<()> {
                for rec in round_records(fold, trial, r) {
                    on_record(&rec)?;
                }
                if let Some(ua) = r.ua {
                    curve.push((r.round, ua));
                }
                let done = r.round + 1;
                if cfg.checkpoint_every > 0
                    && done % cfg.checkpoint_every == 0
                    && done < fcfg.rounds
                {
                    write_params(&dir.join(format!("round{done:04}.fsp")), params)?;
                }
                Ok(())
            };
            step().map_err(|e| {
                let msg = e.to_string();
                io_error = Some(e);
                fedser_core::Error::InvalidInput(msg)
            })
        });
    let state = match (state, io_error) {
        (_, Some(e)) => return Err(e),
        (s, None) => s?,
    };
    write_params(&dir.join("model.fsp"), &state.global)?;
    let metrics = evaluate(net, &state.global, ds, &plan.test)?;
    let report = TrialReport {
        fold,
        trial,
        seed,
        metrics,
        ua_curve: curve,
    };
    write_json(&dir.join("report.json"), &report)?;
    on_record(&MetricRecord::Trial {
        fold,
        trial,
        ua: report.metrics.ua,
        accuracy: report.metrics.accuracy,
        segment_accuracy: report.metrics.segment_accuracy,
    })?;
    Ok(report)
}

/// Runs every selected fold for every trial seed. Writes
/// `config.resolved.toml`, `metrics.jsonl`, per-trial directories and
/// `summary.json` under the output directory.
pub fn run_experiment<E: Executor>(cfg: &ExperimentConfig, exec: &E) -> Result<Summary> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let resolved = out.join("config.resolved.toml");
    fs::write(&resolved, cfg.to_toml()).map_err(Error::io(&resolved))?;

    let ds = load_dataset(cfg)?;
    let net = network_for(cfg, &ds)?;
    let all_folds = make_folds(&ds, &cfg.partition)?.len();
    let folds: Vec<usize> = cfg
        .folds
        .clone()
        .unwrap_or_else(|| (0..all_folds).collect());
    if let Some(&f) = folds.iter().find(|&&f| f >= all_folds) {
        return Err(Error::Config(format!(
            "fold {f} requested, {all_folds} available"
        )));
    }
    let mut log = JsonLines::create(out.join("metrics.jsonl"))?;
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    let mut pooled = Vec::new();
    for &fold in &folds {
        let mut uas = Vec::new();
        for (trial, &seed) in cfg.seeds().iter().enumerate() {
            let dir = out
                .join(format!("fold{fold:02}"))
                .join(format!("trial{trial:02}"));
            match run_trial(cfg, &ds, &net, fold, trial, seed, exec, &dir, |r| {
                log.push(r)
            }) {
                Ok(rep) => uas.push(rep.metrics.ua),
                Err(e) => failures.push(Failure {
                    fold,
                    trial,
                    error: e.to_string(),
                }),
            }
        }
        pooled.extend_from_slice(&uas);
        let (mean_ua, std_ua) = mean_std(&uas);
        summaries.push(FoldSummary {
            fold,
            trial_ua: uas,
            mean_ua,
            std_ua,
        });
    }
    log.finish()?;
    let (mean_ua, std_ua) = mean_std(&pooled);
    let summary = Summary {
        name: cfg.name.clone(),
        num_classes: ds.num_classes(),
        class_names: ds.class_names.clone(),
        num_params: net.num_params(),
        folds: summaries,
        mean_ua,
        std_ua,
        complete: failures.is_empty(),
        failures,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Evaluates a saved model on the test ids of `fold`.
pub fn evaluate_checkpoint(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    net: &Network,
    params: &ParamSet<f32>,
    fold: usize,
) -> Result<MetricsReport> {
    let folds = make_folds(ds, &cfg.partition)?;
    let f = folds.get(fold).ok_or_else(|| {
        Error::Config(format!("fold {fold} requested, {} available", folds.len()))
    })?;
    Ok(evaluate(net, params, ds, &f.test)?)
}

pub fn compare_summaries(a: &Path, b: &Path) -> Result<DeltaReport> {
    let (sa, sb): (Summary, Summary) = (read_json(a)?, read_json(b)?);
    if sa.num_classes != sb.num_classes {
        return Err(fedser_core::Error::InvalidInput(format!(
            "runs have {} and {} classes",
            sa.num_classes, sb.num_classes
        ))
        .into());
    }
    Ok(compare_runs(&sa.fold_results(), &sb.fold_results())?)
}

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fedser::config::ExperimentConfig;
use fedser::core::data::{synth_dataset, FoldStrategy, PartitionMode, SynthSpec};
use fedser::core::selftrain::SchedulerMode;
use fedser::exec::Parallel;
use fedser::experiment::{
    build_plan, compare_summaries, evaluate_checkpoint, load_dataset, network_for, run_experiment,
};
use fedser::formats::{read_params, write_features, write_features_csv, write_json, PlanRecord};

#[derive(Parser)]
#[command(
    version,
    about = "Semi-supervised federated speech emotion recognition simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic feature corpus and its manifest
    Synth(SynthArgs),
    /// Write the partition plan of one fold
    Partition {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Trial seed the plan is drawn with
        #[arg(long, default_value_t = 0)]
        trial_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full experiment
    Run {
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Evaluate a saved model on a fold's test set
    Eval {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two experiment summaries (B against A)
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 8)]
    speakers: usize,
    #[arg(long, default_value_t = 32)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    mel_bins: usize,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write a CSV dump next to every feature record
    #[arg(long)]
    csv: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchedulerArg {
    Corrected,
    PaperLiteral,
}

#[derive(Clone, Copy, ValueEnum)]
enum PartitionArg {
    Random,
    PerSpeaker,
}

#[derive(Clone, Copy, ValueEnum)]
enum FoldArg {
    Loso,
    KFold,
}

#[derive(Args)]
struct ExpArgs {
    /// Experiment config (TOML); defaults apply when absent
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_name = "K")]
    devices: Option<usize>,
    #[arg(long, value_name = "R")]
    rounds: Option<u32>,
    #[arg(long, value_name = "q")]
    participation: Option<f64>,
    #[arg(long, value_name = "E")]
    local_epochs: Option<u32>,
    /// Device size dispersion, percent
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, value_name = "L")]
    labeled_fraction: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_name = "T")]
    temperature: Option<f64>,
    #[arg(long)]
    tau_min: Option<f64>,
    #[arg(long)]
    tau_max: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_enum)]
    scheduler_mode: Option<SchedulerArg>,
    /// Device data division
    #[arg(long, value_enum)]
    partition_mode: Option<PartitionArg>,
    /// Speaker independent (loso) or speaker overlap (k-fold) evaluation
    #[arg(long, value_enum)]
    fold_strategy: Option<FoldArg>,
    #[arg(long)]
    trials: Option<usize>,
    /// First trial seed; trials use consecutive seeds
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl ExpArgs {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set! {
            devices => c.federation.num_devices,
            rounds => c.federation.rounds,
            participation => c.federation.participation,
            local_epochs => c.federation.local_epochs,
            sigma => c.partition.sigma,
            labeled_fraction => c.partition.labeled_fraction,
            beta => c.selftrain.beta,
            temperature => c.selftrain.temperature,
            tau_min => c.selftrain.tau_min,
            tau_max => c.selftrain.tau_max,
            delta => c.selftrain.delta,
            trials => c.trials,
            workers => c.workers,
        }
        if let Some(m) = self.scheduler_mode {
            c.selftrain.scheduler_mode = match m {
                SchedulerArg::Corrected => SchedulerMode::Corrected,
                SchedulerArg::PaperLiteral => SchedulerMode::PaperLiteral,
            };
        }
        if let Some(m) = self.partition_mode {
            c.partition.mode = match m {
                PartitionArg::Random => PartitionMode::Random,
                PartitionArg::PerSpeaker => PartitionMode::PerSpeaker,
            };
        }
        if let Some(f) = self.fold_strategy {
            c.partition.fold_strategy = match f {
                FoldArg::Loso => FoldStrategy::Loso,
                FoldArg::KFold => FoldStrategy::KFold,
            };
        }
        if self.trials.is_some() || self.seed.is_some() {
            let start = self
                .seed
                .or_else(|| c.seeds.as_ref().and_then(|s| s.first().copied()))
                .unwrap_or(0);
            c.seeds = Some((start..start + c.trials as u64).collect());
        }
        if let Some(o) = &self.out_dir {
            c.output_dir = o.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

fn synth(a: &SynthArgs) -> anyhow::Result<()> {
    let mut spec = SynthSpec {
        num_classes: a.classes,
        samples_per_class: a.samples_per_class,
        speakers: a.speakers,
        frames: a.frames,
        mel_bins: a.mel_bins,
        seed: a.seed,
        ..Default::default()
    };
    if let Some(n) = a.noise {
        spec.noise = n;
    }
    let ds = synth_dataset(&spec)?;
    let feat_dir = a.out.join("features");
    fs::create_dir_all(&feat_dir).with_context(|| format!("creating {}", feat_dir.display()))?;
    let mut w = csv::Writer::from_path(a.out.join("manifest.csv"))?;
    w.write_record(["path", "speaker_id", "label", "session"])?;
    for u in &ds.samples {
        let rel = PathBuf::from("features").join(format!("{}.feat", u.id));
        let seg = &u.segments[0];
        write_features(&a.out.join(&rel), seg)?;
        if a.csv {
            write_features_csv(&a.out.join(rel.with_extension("csv")), seg)?;
        }
        w.write_record([
            rel.to_string_lossy().as_ref(),
            &u.speaker,
            &ds.class_names[u.label],
            &u.session,
        ])?;
    }
    w.flush()?;
    println!("wrote {} utterances to {}", ds.len(), a.out.display());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Synth(a) => synth(&a)?,
        Cmd::Partition {
            exp,
            fold,
            trial_seed,
            out,
        } => {
            let cfg = exp.resolve()?;
            let ds = load_dataset(&cfg)?;
            let plan = build_plan(&cfg, &ds, fold, trial_seed)?;
            write_json(&out, &PlanRecord::new(&plan, &ds))?;
            for w in &plan.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "fold {fold}: {} devices, {} test samples",
                plan.num_devices(),
                plan.test.len()
            );
        }
        Cmd::Run { exp } => {
            let cfg = exp.resolve()?;
            let exec = Parallel::new(cfg.workers);
            let summary = run_experiment(&cfg, &exec)?;
            for f in &summary.folds {
                println!(
                    "fold {:2}: UA {:.2} ± {:.2} %",
                    f.fold,
                    100.0 * f.mean_ua,
                    100.0 * f.std_ua
                );
            }
            println!(
                "mean UA {:.2} ± {:.2} % -> {}",
                100.0 * summary.mean_ua,
                100.0 * summary.std_ua,
                cfg.output_dir.display()
            );
            if !summary.complete {
                for f in &summary.failures {
                    eprintln!("fold {} trial {} failed: {}", f.fold, f.trial, f.error);
                }
                bail!("experiment incomplete");
            }
        }
        Cmd::Eval {
            exp,
            params,
            fold,
            out,
        } => {
            let cfg = exp.resolve()?;
            let ds = load_dataset(&cfg)?;
            let net = network_for(&cfg, &ds)?;
            let p = read_params(&params, &net)?;
            let report = evaluate_checkpoint(&cfg, &ds, &net, &p, fold)?;
            println!(
                "UA {:.2} %  accuracy {:.2} %",
                100.0 * report.ua,
                100.0 * report.accuracy
            );
            for (name, row) in ds.class_names.iter().zip(&report.confusion.counts) {
                println!("{name:>10} {row:?}");
            }
            if let Some(o) = out {
                write_json(&o, &report)?;
            }
        }
        Cmd::Compare { a, b, out } => {
            let d = compare_summaries(&a, &b)?;
            for f in &d.folds {
                println!(
                    "fold {:2}: {:.2} -> {:.2} ({:+.2})",
                    f.fold,
                    100.0 * f.mean_a,
                    100.0 * f.mean_b,
                    100.0 * f.delta
                );
            }
            println!("mean delta {:+.2} UA points; B better {}x, worse {}x, tied {}x; sign test p = {:.4}", 100.0 * d.mean_delta, d.wins, d.losses, d.ties, d.sign_test_p);
            if let Some(o) = out {
                write_json(&o, &d)?;
            }
        }
    }
    Ok(())
}

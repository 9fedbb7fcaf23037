//! Datasets, cross-validation folds and device partitioning.

mod folds;
mod partition;
mod synth;

pub use folds::{make_folds, split_labeled, Fold, LabelSplit};
pub use partition::{assign_devices, DeviceShard, PartitionPlan};
pub use synth::{synth_dataset, SynthSpec};

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::features::FeatureTensor;

pub const EMOTIONS: [&str; 4] = ["neutral", "happy", "sad", "angry"];

/// One labelled utterance, already cut into fixed-size feature segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    /// Recording session; speakers of one session are held out together.
    pub session: String,
    pub label: usize,
    pub segments: Vec<FeatureTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Utterance>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(samples: Vec<Utterance>, class_names: Vec<String>) -> Result<Self> {
        if class_names.len() < 2 {
            bail!(InvalidInput, "need at least two classes");
        }
        let mut seen = alloc::vec![false; class_names.len()];
        for s in &samples {
            if s.label >= class_names.len() {
                bail!(
                    InvalidInput,
                    "sample {} has label {} but only {} classes",
                    s.id,
                    s.label,
                    class_names.len()
                );
            }
            if s.segments.is_empty() {
                bail!(InvalidInput, "sample {} has no segments", s.id);
            }
            seen[s.label] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            bail!(InvalidInput, "class `{}` has no samples", class_names[c]);
        }
        let shape = (
            samples[0].segments[0].frames,
            samples[0].segments[0].mel_bins,
        );
        for s in &samples {
            for seg in &s.segments {
                if (seg.frames, seg.mel_bins) != shape {
                    bail!(
                        Shape,
                        "sample {} has a {}x{} segment, expected {}x{}",
                        s.id,
                        seg.frames,
                        seg.mel_bins,
                        shape.0,
                        shape.1
                    );
                }
            }
        }
        Ok(Self {
            samples,
            class_names,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(frames, mel_bins)` of every segment.
    pub fn segment_shape(&self) -> (usize, usize) {
        let s = &self.samples[0].segments[0];
        (s.frames, s.mel_bins)
    }

    pub fn speakers(&self) -> Vec<String> {
        self.samples
            .iter()
            .map(|s| s.speaker.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn sessions(&self) -> Vec<String> {
        self.samples
            .iter()
            .map(|s| s.session.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn class_counts(&self, ids: &[usize]) -> Vec<usize> {
        let mut c = alloc::vec![0; self.num_classes()];
        for &i in ids {
            c[self.samples[i].label] += 1;
        }
        c
    }

    /// Every segment of the given utterances with its utterance label.
    pub fn labeled_segments(&self, ids: &[usize]) -> Vec<(&FeatureTensor, usize)> {
        ids.iter()
            .flat_map(|&i| {
                self.samples[i]
                    .segments
                    .iter()
                    .map(move |s| (s, self.samples[i].label))
            })
            .collect()
    }

    pub fn segments(&self, ids: &[usize]) -> Vec<&FeatureTensor> {
        ids.iter()
            .flat_map(|&i| self.samples[i].segments.iter())
            .collect()
    }

    pub(crate) fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.samples.len()) {
            bail!(
                InvalidInput,
                "{}",
                format!(
                    "sample id {bad} out of range ({} samples)",
                    self.samples.len()
                )
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PartitionMode {
    /// Shuffled samples, device sizes spread by `sigma`.
    Random,
    /// Every device holds all samples of its speaker(s).
    PerSpeaker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FoldStrategy {
    /// Leave one session out.
    Loso,
    /// Stratified k-fold.
    KFold,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PartitionConfig {
    pub mode: PartitionMode,
    /// Coefficient of variation of device shard sizes, in percent.
    pub sigma: f64,
    pub labeled_fraction: f64,
    pub fold_strategy: FoldStrategy,
    /// Fold count for `KFold`.
    pub k: usize,
    pub seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            mode: PartitionMode::Random,
            sigma: 25.0,
            labeled_fraction: 0.1,
            fold_strategy: FoldStrategy::Loso,
            k: 5,
            seed: 0,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            bail!(Config, "sigma must be >= 0");
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            bail!(Config, "labeled fraction must be in (0, 1]");
        }
        if self.fold_strategy == FoldStrategy::KFold && self.k < 2 {
            bail!(Config, "k-fold needs k >= 2");
        }
        Ok(())
    }
}

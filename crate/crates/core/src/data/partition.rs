use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent f64 methods when std is linked
use num_traits::Float;
use rand::seq::SliceRandom;

use super::{split_labeled, Dataset, PartitionConfig, PartitionMode};
use crate::error::{bail, Result};
use crate::rng::{derive_seed, normal, rng_for};

const SIZE_TAG: u64 = 0x5123;
const SHUFFLE_TAG: u64 = 0x5f1e;
const SPEAKER_TAG: u64 = 0x59ea;
const SPLIT_TAG: u64 = 0x5b17;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeviceShard {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub speakers: Vec<String>,
}

impl DeviceShard {
    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Device shards for one fold plus the fold's test ids.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PartitionPlan {
    pub fold: usize,
    pub config: PartitionConfig,
    pub devices: Vec<DeviceShard>,
    pub test: Vec<usize>,
    pub warnings: Vec<String>,
}

impl PartitionPlan {
    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    /// Checks that shards and test set are pairwise disjoint and that they
    /// cover exactly `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut owner = alloc::vec![false; n];
        let all = self
            .devices
            .iter()
            .flat_map(|d| d.labeled.iter().chain(&d.unlabeled))
            .chain(&self.test);
        for &i in all {
            if i >= n {
                bail!(InvalidInput, "plan references sample {i} of {n}");
            }
            if owner[i] {
                bail!(InvalidInput, "sample {i} appears twice in the plan");
            }
            owner[i] = true;
        }
        if let Some(i) = owner.iter().position(|o| !o) {
            bail!(InvalidInput, "sample {i} is not assigned");
        }
        Ok(())
    }
}

/// Spreads `train` over `num_devices` shards and splits each shard into
/// labelled and unlabelled parts.
pub fn assign_devices(
    ds: &Dataset,
    fold: usize,
    train: &[usize],
    test: &[usize],
    num_devices: usize,
    cfg: &PartitionConfig,
) -> Result<PartitionPlan> {
    cfg.validate()?;
    ds.check_ids(train)?;
    ds.check_ids(test)?;
    if num_devices == 0 {
        bail!(Config, "need at least one device");
    }
    let mut members: Vec<Vec<usize>> = alloc::vec![Vec::new(); num_devices];
    let mut speakers: Vec<Vec<String>> = alloc::vec![Vec::new(); num_devices];
    let mut sorted = train.to_vec();
    sorted.sort_unstable();
    match cfg.mode {
        PartitionMode::Random => {
            let sizes = shard_sizes(
                sorted.len(),
                num_devices,
                cfg.sigma,
                derive_seed(cfg.seed, &[SIZE_TAG, fold as u64]),
            );
            sorted.shuffle(&mut rng_for(cfg.seed, &[SHUFFLE_TAG, fold as u64]));
            let mut start = 0;
            for (k, size) in sizes.into_iter().enumerate() {
                members[k] = sorted[start..start + size].to_vec();
                start += size;
            }
        }
        PartitionMode::PerSpeaker => {
            let mut spk: Vec<String> = sorted
                .iter()
                .map(|&i| ds.samples[i].speaker.clone())
                .collect();
            spk.sort();
            spk.dedup();
            if num_devices > spk.len() {
                bail!(
                    InvalidInput,
                    "{num_devices} devices but only {} training speakers",
                    spk.len()
                );
            }
            spk.shuffle(&mut rng_for(cfg.seed, &[SPEAKER_TAG, fold as u64]));
            for (j, s) in spk.into_iter().enumerate() {
                speakers[j % num_devices].push(s);
            }
            for (k, list) in speakers.iter_mut().enumerate() {
                list.sort();
                members[k] = sorted
                    .iter()
                    .copied()
                    .filter(|&i| list.binary_search(&ds.samples[i].speaker).is_ok())
                    .collect();
            }
        }
    }

    let mut warnings = Vec::new();
    let mut devices = Vec::with_capacity(num_devices);
    for (k, (mut ids, spk)) in members.into_iter().zip(speakers).enumerate() {
        ids.sort_unstable();
        let split = split_labeled(
            ds,
            &ids,
            cfg.labeled_fraction,
            derive_seed(cfg.seed, &[SPLIT_TAG, fold as u64, k as u64]),
        )?;
        if !split.unlabeled_classes.is_empty() {
            warnings.push(format!(
                "device {k}: no labelled samples for classes {:?}",
                split.unlabeled_classes
            ));
        }
        let spk = if spk.is_empty() {
            let mut s: Vec<String> = ids.iter().map(|&i| ds.samples[i].speaker.clone()).collect();
            s.sort();
            s.dedup();
            s
        } else {
            spk
        };
        devices.push(DeviceShard {
            labeled: split.labeled,
            unlabeled: split.unlabeled,
            speakers: spk,
        });
    }
    let mut test = test.to_vec();
    test.sort_unstable();
    Ok(PartitionPlan {
        fold,
        config: cfg.clone(),
        devices,
        test,
        warnings,
    })
}

/// Device sizes summing to `n`: relative weights drawn from a normal with
/// mean 1 and standard deviation `sigma` percent (truncated to (0, 2]),
/// then rounded by largest remainder. Every device gets one sample first
/// when `n >= k`.
pub(crate) fn shard_sizes(n: usize, k: usize, sigma: f64, seed: u64) -> Vec<usize> {
    let mut rng = rng_for(seed, &[]);
    let sd = sigma / 100.0;
    let weights: Vec<f64> = (0..k)
        .map(|_| {
            if sd == 0.0 {
                return 1.0;
            }
            loop {
                let w = 1.0 + sd * normal(&mut rng);
                if w > 0.0 && w <= 2.0 {
                    break w;
                }
            }
        })
        .collect();
    let floor = if n >= k { 1 } else { 0 };
    let rest = n - floor * k;
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| rest as f64 * w / total).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - sizes[b] as f64)
            .total_cmp(&(exact[a] - sizes[a] as f64))
            .then(a.cmp(&b))
    });
    let short = rest - sizes.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        sizes[i] += 1;
    }
    sizes.iter_mut().for_each(|s| *s += floor);
    sizes
}

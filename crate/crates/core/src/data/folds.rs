use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent f64 methods when std is linked
use num_traits::Float;
use rand::seq::SliceRandom;

use super::{Dataset, FoldStrategy, PartitionConfig};
use crate::error::{bail, Result};
use crate::rng::rng_for;

const FOLD_TAG: u64 = 0xf01d;
const LABEL_TAG: u64 = 0x1abe1;

/// Sample ids of one cross-validation split, both sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn make_folds(ds: &Dataset, cfg: &PartitionConfig) -> Result<Vec<Fold>> {
    cfg.validate()?;
    let n = ds.len();
    let mut assign = alloc::vec![0usize; n];
    let k = match cfg.fold_strategy {
        FoldStrategy::Loso => {
            let sessions = ds.sessions();
            if sessions.len() < 2 {
                bail!(
                    InvalidInput,
                    "leave-one-session-out needs at least two sessions, found {}",
                    sessions.len()
                );
            }
            for (i, s) in ds.samples.iter().enumerate() {
                assign[i] = sessions.binary_search(&s.session).expect("session listed");
            }
            sessions.len()
        }
        FoldStrategy::KFold => {
            if cfg.k > n {
                bail!(InvalidInput, "{}-fold split of {n} samples", cfg.k);
            }
            // Class by class, shuffled, dealt round-robin across folds.
            let mut pos = 0;
            for c in 0..ds.num_classes() {
                let mut ids: Vec<usize> = (0..n).filter(|&i| ds.samples[i].label == c).collect();
                ids.shuffle(&mut rng_for(cfg.seed, &[FOLD_TAG, c as u64]));
                for i in ids {
                    assign[i] = pos % cfg.k;
                    pos += 1;
                }
            }
            cfg.k
        }
    };
    Ok((0..k)
        .map(|f| Fold {
            train: (0..n).filter(|&i| assign[i] != f).collect(),
            test: (0..n).filter(|&i| assign[i] == f).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSplit {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    /// Classes present in the input that received no labelled sample.
    pub unlabeled_classes: Vec<usize>,
}

/// Marks `round(fraction * n)` of `ids` as labelled, keeping each class's
/// share within one sample of its proportion. Both outputs are sorted.
pub fn split_labeled(ds: &Dataset, ids: &[usize], fraction: f64, seed: u64) -> Result<LabelSplit> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        bail!(Config, "labeled fraction must be in (0, 1]");
    }
    ds.check_ids(ids)?;
    let counts = ds.class_counts(ids);
    let exact: Vec<f64> = counts.iter().map(|&c| fraction * c as f64).collect();
    let mut take: Vec<usize> = exact.iter().map(|&e| e.round() as usize).collect();
    let target = (fraction * ids.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..counts.len()).collect();
    let mut total: usize = take.iter().sum();
    if total < target {
        order.sort_by(|&a, &b| {
            (exact[b] - take[b] as f64)
                .total_cmp(&(exact[a] - take[a] as f64))
                .then(a.cmp(&b))
        });
        for &c in order.iter().cycle().take(2 * counts.len()) {
            if total == target {
                break;
            }
            if take[c] < counts[c] {
                take[c] += 1;
                total += 1;
            }
        }
    } else if total > target {
        order.sort_by(|&a, &b| {
            (exact[a] - take[a] as f64)
                .total_cmp(&(exact[b] - take[b] as f64))
                .then(a.cmp(&b))
        });
        for &c in order.iter().cycle().take(2 * counts.len()) {
            if total == target {
                break;
            }
            if take[c] > 0 {
                take[c] -= 1;
                total -= 1;
            }
        }
    }

    let mut out = LabelSplit::default();
    for c in 0..counts.len() {
        let mut members: Vec<usize> = ids
            .iter()
            .copied()
            .filter(|&i| ds.samples[i].label == c)
            .collect();
        members.sort_unstable();
        members.shuffle(&mut rng_for(seed, &[LABEL_TAG, c as u64]));
        out.labeled.extend_from_slice(&members[..take[c]]);
        out.unlabeled.extend_from_slice(&members[take[c]..]);
        if counts[c] > 0 && take[c] == 0 {
            out.unlabeled_classes.push(c);
        }
    }
    out.labeled.sort_unstable();
    out.unlabeled.sort_unstable();
    Ok(out)
}

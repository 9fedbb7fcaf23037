//! Confusion matrices, unweighted accuracy and run comparison.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent f64 methods when std is linked
use num_traits::Float;

use crate::data::Dataset;
use crate::error::{bail, Error, Result};
use crate::features::utterance_predict;
use crate::model::{Mode, Network, ParamSet};
use crate::Real;

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_rows(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if n == 0 || counts.iter().any(|r| r.len() != n) {
            bail!(Shape, "confusion matrix must be square and non-empty");
        }
        Ok(Self { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> u64 {
        self.row_sums().iter().sum()
    }

    /// Per-class recall, `None` for classes absent from the truth.
    pub fn recalls(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let n: u64 = r.iter().sum();
                (n > 0).then(|| r[i] as f64 / n as f64)
            })
            .collect()
    }

    /// Mean recall over the classes that occur.
    pub fn unweighted_accuracy(&self) -> f64 {
        let r: Vec<f64> = self.recalls().into_iter().flatten().collect();
        if r.is_empty() {
            0.0
        } else {
            r.iter().sum::<f64>() / r.len() as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.num_classes())
            .map(|i| self.counts[i][i])
            .sum::<u64>() as f64
            / total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub recalls: Vec<Option<f64>>,
    pub ua: f64,
    /// Utterance-level weighted accuracy.
    pub accuracy: f64,
    pub segment_accuracy: f64,
    /// Classes with no test samples; UA skips them.
    pub missing_classes: Vec<usize>,
}

impl MetricsReport {
    pub fn from_confusion(confusion: ConfusionMatrix, segment_accuracy: f64) -> Self {
        let recalls = confusion.recalls();
        let missing_classes = recalls
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_none())
            .map(|(i, _)| i)
            .collect();
        Self {
            ua: confusion.unweighted_accuracy(),
            accuracy: confusion.accuracy(),
            recalls,
            confusion,
            segment_accuracy,
            missing_classes,
        }
    }
}

fn argmax<F: Real>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Utterance-level evaluation on `ids`: segment probabilities are averaged
/// before the arg-max.
pub fn evaluate<F: Real>(
    net: &Network,
    params: &ParamSet<F>,
    ds: &Dataset,
    ids: &[usize],
) -> Result<MetricsReport> {
    if ids.is_empty() {
        return Err(Error::Empty("test set"));
    }
    if net.num_classes() != ds.num_classes() {
        bail!(
            InvalidInput,
            "model has {} classes, dataset {}",
            net.num_classes(),
            ds.num_classes()
        );
    }
    let mut cm = ConfusionMatrix::new(ds.num_classes());
    let (mut seg_hits, mut seg_total) = (0usize, 0usize);
    for &i in ids {
        let u = ds
            .samples
            .get(i)
            .ok_or_else(|| Error::InvalidInput(alloc::format!("sample id {i} out of range")))?;
        let probs = utterance_predict(net, params, &u.segments)?;
        cm.add(u.label, argmax(&probs));
        for s in &u.segments {
            seg_hits += (argmax(&net.predict(params, s, Mode::Eval)?) == u.label) as usize;
            seg_total += 1;
        }
    }
    Ok(MetricsReport::from_confusion(
        cm,
        seg_hits as f64 / seg_total as f64,
    ))
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-trial UA of one fold of a run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FoldResult {
    pub fold: usize,
    pub num_classes: usize,
    pub trial_ua: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FoldDelta {
    pub fold: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    /// `mean_b - mean_a`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeltaReport {
    pub folds: Vec<FoldDelta>,
    pub mean_delta: f64,
    /// Paired trials where B beat A, lost to A, or tied.
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// Two-sided exact sign test over non-tied pairs.
    pub sign_test_p: f64,
}

/// Compares run B against run A fold by fold and trial by trial.
pub fn compare_runs(a: &[FoldResult], b: &[FoldResult]) -> Result<DeltaReport> {
    if a.len() != b.len() || a.is_empty() {
        bail!(InvalidInput, "runs have {} and {} folds", a.len(), b.len());
    }
    let mut folds = Vec::with_capacity(a.len());
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (fa, fb) in a.iter().zip(b) {
        if fa.fold != fb.fold || fa.trial_ua.len() != fb.trial_ua.len() {
            bail!(
                InvalidInput,
                "fold {} / {} structure differs",
                fa.fold,
                fb.fold
            );
        }
        if fa.num_classes != fb.num_classes {
            bail!(
                InvalidInput,
                "runs have {} and {} classes",
                fa.num_classes,
                fb.num_classes
            );
        }
        for (x, y) in fa.trial_ua.iter().zip(&fb.trial_ua) {
            if y > x {
                wins += 1;
            } else if y < x {
                losses += 1;
            } else {
                ties += 1;
            }
        }
        let (mean_a, mean_b) = (mean_std(&fa.trial_ua).0, mean_std(&fb.trial_ua).0);
        folds.push(FoldDelta {
            fold: fa.fold,
            mean_a,
            mean_b,
            delta: mean_b - mean_a,
        });
    }
    let mean_delta = folds.iter().map(|f| f.delta).sum::<f64>() / folds.len() as f64;
    Ok(DeltaReport {
        folds,
        mean_delta,
        wins,
        losses,
        ties,
        sign_test_p: sign_test(wins, losses),
    })
}

/// Two-sided exact binomial test of `wins` against `losses` at p = 1/2.
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let k = wins.min(losses);
    // log-space binomial coefficients keep large n finite
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_c = 0.0f64;
    let mut tail = 0.0;
    for i in 0..=k {
        if i > 0 {
            ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        tail += (ln_c + ln_half_n).exp();
    }
    (2.0 * tail).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_checked_ua() {
        let cm = ConfusionMatrix::from_rows(vec![vec![5, 0], vec![2, 3]]).unwrap();
        assert_eq!(cm.recalls(), vec![Some(1.0), Some(0.6)]);
        assert!((cm.unweighted_accuracy() - 0.8).abs() < 1e-12);
        assert_eq!(cm.row_sums(), vec![5, 5]);
        assert!((cm.accuracy() - 0.8).abs() < 1e-12);

        let mut constant = ConfusionMatrix::new(4);
        for c in 0..4 {
            for _ in 0..10 {
                constant.add(c, 2);
            }
        }
        assert!((constant.unweighted_accuracy() - 0.25).abs() < 1e-12);

        let mut perfect = ConfusionMatrix::new(3);
        (0..3).for_each(|c| perfect.add(c, c));
        assert_eq!(perfect.unweighted_accuracy(), 1.0);
    }

    #[test]
    fn missing_classes_are_skipped() {
        let cm =
            ConfusionMatrix::from_rows(vec![vec![2, 0, 0], vec![0, 0, 0], vec![1, 0, 1]]).unwrap();
        let r = MetricsReport::from_confusion(cm, 0.0);
        assert_eq!(r.missing_classes, vec![1]);
        assert!((r.ua - 0.75).abs() < 1e-12);
    }

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test(0, 0), 1.0);
        assert!((sign_test(5, 0) - 0.0625).abs() < 1e-12);
        // 2 * (1 + 10 + 45) / 1024
        assert!((sign_test(2, 8) - 112.0 / 1024.0).abs() < 1e-12);
        assert_eq!(sign_test(3, 3), 1.0);
    }

    #[test]
    fn compare_guards() {
        let a = vec![FoldResult {
            fold: 0,
            num_classes: 4,
            trial_ua: vec![0.5, 0.6],
        }];
        let same = compare_runs(&a, &a).unwrap();
        assert_eq!(same.mean_delta, 0.0);
        assert_eq!((same.wins, same.losses, same.ties), (0, 0, 2));
        let b = vec![FoldResult {
            fold: 0,
            num_classes: 3,
            trial_ua: vec![0.5, 0.6],
        }];
        assert!(compare_runs(&a, &b).is_err());
        let c = vec![FoldResult {
            fold: 1,
            num_classes: 4,
            trial_ua: vec![0.5, 0.6],
        }];
        assert!(compare_runs(&a, &c).is_err());
        let d = vec![FoldResult {
            fold: 0,
            num_classes: 4,
            trial_ua: vec![0.6, 0.7],
        }];
        assert!((compare_runs(&a, &d).unwrap().mean_delta - 0.1).abs() < 1e-12);
    }

    #[test]
    fn mean_and_std() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[0.4]), (0.4, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
    }
}

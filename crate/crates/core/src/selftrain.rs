//! Local semi-supervised update: temperature-softened pseudo-labels, a
//! device-specific confidence threshold and the combined
//! supervised + pseudo-label loss.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // shadowed by inherent f64 methods when std is linked
use num_traits::Float;
use rand::seq::SliceRandom;

use crate::error::{bail, Error, Result};
use crate::features::FeatureTensor;
use crate::model::{
    adam_step, cross_entropy, softmax_t, AdamConfig, Mode, Network, OptimizerState, ParamSet,
};
use crate::rng::{derive_seed, rng_for};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SchedulerMode {
    /// Rising cosine from `tau_min` to `tau_max`.
    Corrected,
    /// `0.5 (tau_max - tau_min) (1 + cos(pi x / R))`, which falls from
    /// `tau_max - tau_min` to zero.
    PaperLiteral,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SelfTrainConfig {
    /// Weight of the pseudo-label loss.
    pub beta: f64,
    pub temperature: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    /// Weight of a device's participation lag in the threshold.
    pub delta: f64,
    pub scheduler_mode: SchedulerMode,
    /// Samples per stream per step; `None` takes both streams whole, one
    /// step per epoch.
    pub batch_size: Option<usize>,
    pub optimizer: AdamConfig,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            temperature: 2.0,
            tau_min: 0.5,
            tau_max: 0.9,
            delta: 0.5,
            scheduler_mode: SchedulerMode::Corrected,
            batch_size: Some(8),
            optimizer: AdamConfig::default(),
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            bail!(Config, "beta must be >= 0");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            bail!(Config, "temperature must be > 0");
        }
        if !(0.0 <= self.tau_min && self.tau_min <= self.tau_max && self.tau_max <= 1.0) {
            bail!(Config, "need 0 <= tau_min <= tau_max <= 1");
        }
        if !(0.0..=1.0).contains(&self.delta) {
            bail!(Config, "delta must be in [0, 1]");
        }
        if self.batch_size == Some(0) {
            bail!(Config, "batch_size must be positive");
        }
        if !(self.optimizer.learning_rate > 0.0) {
            bail!(Config, "learning rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PseudoLabel {
    pub class: usize,
    /// Largest temperature-softened probability.
    pub confidence: f64,
    pub sample: usize,
}

/// Arg-max class of `softmax(z / T)`, lowest index on ties.
pub fn pseudo_label<F: Real>(z: &[F], temperature: f64, sample: usize) -> Result<PseudoLabel> {
    if z.is_empty() {
        return Err(Error::Empty("logits"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        bail!(InvalidInput, "non-finite logits for sample {sample}");
    }
    let p = softmax_t(z, temperature)?;
    let mut class = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[class] {
            class = i;
        }
    }
    Ok(PseudoLabel {
        class,
        confidence: p[class].f64(),
        sample,
    })
}

/// Device-specific threshold after `completed` global rounds, of which the
/// device took part in `device_completed`, out of `total` rounds.
pub fn confidence_threshold(
    total: u32,
    completed: u32,
    device_completed: u32,
    cfg: &SelfTrainConfig,
) -> Result<f64> {
    if total == 0 || device_completed > completed || completed > total {
        bail!(
            InvalidInput,
            "need 0 <= C_s ({device_completed}) <= C ({completed}) <= R ({total}) and R > 0"
        );
    }
    let (r, c, cs) = (total as f64, completed as f64, device_completed as f64);
    let x = (c - cfg.delta * (c - cs)).clamp(0.0, r);
    let span = cfg.tau_max - cfg.tau_min;
    Ok(match cfg.scheduler_mode {
        SchedulerMode::Corrected => cfg.tau_min + 0.5 * span * (1.0 - (PI * x / r).cos()),
        SchedulerMode::PaperLiteral => 0.5 * span * (1.0 + (PI * x / r).cos()),
    })
}

/// Loss terms of one step plus the logit gradients of the total.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss<F> {
    pub supervised: F,
    pub unsupervised: F,
    pub total: F,
    pub sup_grad: Vec<Vec<F>>,
    pub unsup_grad: Vec<Vec<F>>,
}

/// `L_s + beta * L_u`: mean cross-entropy on labelled logits plus the mean
/// cross-entropy against pseudo-labels over the `mask`ed unlabelled logits.
/// Either term is zero when it has no samples.
pub fn combined_loss<F: Real>(
    sup_logits: &[Vec<F>],
    labels: &[usize],
    unsup_logits: &[Vec<F>],
    pseudo: &[usize],
    mask: &[bool],
    beta: f64,
) -> Result<CombinedLoss<F>> {
    if sup_logits.len() != labels.len()
        || unsup_logits.len() != pseudo.len()
        || pseudo.len() != mask.len()
    {
        bail!(Shape, "inconsistent loss inputs");
    }
    let mut out = CombinedLoss {
        supervised: F::zero(),
        unsupervised: F::zero(),
        total: F::zero(),
        sup_grad: Vec::with_capacity(labels.len()),
        unsup_grad: Vec::with_capacity(pseudo.len()),
    };
    if !labels.is_empty() {
        let inv = F::of(1.0 / labels.len() as f64);
        for (z, &y) in sup_logits.iter().zip(labels) {
            if y >= z.len() {
                bail!(InvalidInput, "label {y} out of range");
            }
            let (l, mut g) = cross_entropy(z, y);
            out.supervised += l * inv;
            g.iter_mut().for_each(|v| *v *= inv);
            out.sup_grad.push(g);
        }
    }
    let kept = mask.iter().filter(|&&m| m).count();
    let scale = if kept > 0 {
        F::of(beta / kept as f64)
    } else {
        F::zero()
    };
    for ((z, &y), &m) in unsup_logits.iter().zip(pseudo).zip(mask) {
        if !m {
            out.unsup_grad.push(vec![F::zero(); z.len()]);
            continue;
        }
        let (l, mut g) = cross_entropy(z, y);
        out.unsupervised += l / F::of(kept as f64);
        g.iter_mut().for_each(|v| *v *= scale);
        out.unsup_grad.push(g);
    }
    out.total = out.supervised + F::of(beta) * out.unsupervised;
    Ok(out)
}

/// A device's local samples.
#[derive(Debug, Clone, Default)]
pub struct LocalData<'a> {
    pub labeled: Vec<(&'a FeatureTensor, usize)>,
    pub unlabeled: Vec<&'a FeatureTensor>,
}

/// Outcome of a single optimisation step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepStats {
    pub supervised_loss: f64,
    pub unsupervised_loss: f64,
    pub evaluated: usize,
    pub retained: usize,
    pub confidence_sum: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeviceStats {
    pub tau: f64,
    pub labeled: usize,
    pub unlabeled: usize,
    pub steps: usize,
    /// True when the device had nothing to learn from and returned its input.
    pub skipped: bool,
    /// Share of pseudo-labelled samples that cleared the threshold.
    pub retained_fraction: f64,
    pub mean_confidence: f64,
    /// Mean over steps.
    pub supervised_loss: f64,
    pub unsupervised_loss: f64,
}

/// Gradient of `L_s + beta * L_u` (plus L2) for one paired batch. Pseudo-labels
/// come from an eval-mode pass of the current parameters; unlabelled samples
/// below `tau` are masked out. Returns `None` when nothing contributes.
pub fn batch_gradient<F: Real>(
    net: &Network,
    params: &ParamSet<F>,
    labeled: &[(&FeatureTensor, usize)],
    unlabeled: &[&FeatureTensor],
    tau: f64,
    cfg: &SelfTrainConfig,
    step_seed: u64,
) -> Result<(Option<ParamSet<F>>, StepStats)> {
    let mut stats = StepStats::default();
    let mut pseudo = Vec::new();
    if cfg.beta > 0.0 {
        for (i, x) in unlabeled.iter().enumerate() {
            let pl = pseudo_label(&net.predict(params, x, Mode::Eval)?, cfg.temperature, i)?;
            stats.evaluated += 1;
            stats.confidence_sum += pl.confidence;
            if pl.confidence >= tau {
                pseudo.push(pl);
            }
        }
    }
    stats.retained = pseudo.len();
    if labeled.is_empty() && pseudo.is_empty() {
        return Ok((None, stats));
    }

    let mut sup_logits = Vec::with_capacity(labeled.len());
    let mut sup_caches = Vec::with_capacity(labeled.len());
    for (i, (x, _)) in labeled.iter().enumerate() {
        let (z, c) = net.forward(
            params,
            x,
            Mode::Train {
                seed: derive_seed(step_seed, &[0, i as u64]),
            },
        )?;
        sup_logits.push(z);
        sup_caches.push(c);
    }
    let mut un_logits = Vec::with_capacity(pseudo.len());
    let mut un_caches = Vec::with_capacity(pseudo.len());
    for pl in &pseudo {
        let seed = derive_seed(step_seed, &[1, pl.sample as u64]);
        let (z, c) = net.forward(params, unlabeled[pl.sample], Mode::Train { seed })?;
        un_logits.push(z);
        un_caches.push(c);
    }
    let labels: Vec<usize> = labeled.iter().map(|(_, y)| *y).collect();
    let targets: Vec<usize> = pseudo.iter().map(|p| p.class).collect();
    let mask = vec![true; targets.len()];
    let loss = combined_loss(&sup_logits, &labels, &un_logits, &targets, &mask, cfg.beta)?;
    stats.supervised_loss = loss.supervised.f64();
    stats.unsupervised_loss = loss.unsupervised.f64();

    let mut grads = params.zeros_like();
    for (c, d) in sup_caches.into_iter().zip(&loss.sup_grad) {
        net.accumulate_gradient(params, c, d, &mut grads)?;
    }
    for (c, d) in un_caches.into_iter().zip(&loss.unsup_grad) {
        net.accumulate_gradient(params, c, d, &mut grads)?;
    }
    net.add_l2(params, &mut grads);
    Ok((Some(grads), stats))
}

/// Runs `epochs` local epochs of paired labelled/unlabelled batches starting
/// from `params`, with a fresh Adam state.
///
/// Each epoch shuffles both streams and walks them in equally sized batches;
/// the shorter stream wraps around. The batch schedule depends only on the
/// shard sizes, so `beta = 0` takes exactly the same supervised steps as
/// `beta > 0`.
pub fn device_update<F: Real>(
    net: &Network,
    params: &ParamSet<F>,
    data: &LocalData<'_>,
    tau: f64,
    cfg: &SelfTrainConfig,
    epochs: u32,
    seed: u64,
) -> Result<(ParamSet<F>, DeviceStats)> {
    cfg.validate()?;
    if epochs == 0 {
        bail!(Config, "local epochs must be >= 1");
    }
    let (n_l, n_u) = (data.labeled.len(), data.unlabeled.len());
    let mut stats = DeviceStats {
        tau,
        labeled: n_l,
        unlabeled: n_u,
        ..Default::default()
    };
    let len = n_l.max(n_u);
    if len == 0 || (n_l == 0 && cfg.beta == 0.0) {
        stats.skipped = true;
        return Ok((params.clone(), stats));
    }
    let full = cfg.batch_size.is_none();
    let bsz = cfg.batch_size.unwrap_or(len).min(len);
    let n_batches = len.div_ceil(bsz);

    let mut theta = params.clone();
    let mut opt = OptimizerState::new(&theta, cfg.optimizer);
    let (mut evaluated, mut retained, mut conf_sum) = (0usize, 0usize, 0.0f64);
    let (mut sup_sum, mut unsup_sum) = (0.0f64, 0.0f64);
    let mut lab_batch = Vec::with_capacity(bsz);
    let mut un_batch = Vec::with_capacity(bsz);
    for epoch in 0..epochs as u64 {
        let mut perm_l: Vec<usize> = (0..n_l).collect();
        let mut perm_u: Vec<usize> = (0..n_u).collect();
        perm_l.shuffle(&mut rng_for(seed, &[epoch, 0]));
        perm_u.shuffle(&mut rng_for(seed, &[epoch, 1]));
        for b in 0..n_batches {
            let start = b * bsz;
            let size = bsz.min(len - start);
            lab_batch.clear();
            un_batch.clear();
            if full {
                lab_batch.extend(perm_l.iter().map(|&i| data.labeled[i]));
                un_batch.extend(perm_u.iter().map(|&i| data.unlabeled[i]));
            } else {
                if n_l > 0 {
                    lab_batch.extend((start..start + size).map(|i| data.labeled[perm_l[i % n_l]]));
                }
                if n_u > 0 {
                    un_batch.extend((start..start + size).map(|i| data.unlabeled[perm_u[i % n_u]]));
                }
            }
            let step_seed = derive_seed(seed, &[epoch, b as u64, 2]);
            let (grads, st) =
                batch_gradient(net, &theta, &lab_batch, &un_batch, tau, cfg, step_seed)?;
            evaluated += st.evaluated;
            retained += st.retained;
            conf_sum += st.confidence_sum;
            if let Some(g) = grads {
                adam_step(&mut theta, &g, &mut opt)?;
                stats.steps += 1;
                sup_sum += st.supervised_loss;
                unsup_sum += st.unsupervised_loss;
            }
        }
    }
    stats.skipped = stats.steps == 0;
    if evaluated > 0 {
        stats.retained_fraction = retained as f64 / evaluated as f64;
        stats.mean_confidence = conf_sum / evaluated as f64;
    }
    if stats.steps > 0 {
        stats.supervised_loss = sup_sum / stats.steps as f64;
        stats.unsupervised_loss = unsup_sum / stats.steps as f64;
    }
    Ok((theta, stats))
}

/// Fraction of `unlabeled` whose softened confidence clears `tau` under
/// fixed parameters, and their mean confidence.
pub fn retention<F: Real>(
    net: &Network,
    params: &ParamSet<F>,
    unlabeled: &[&FeatureTensor],
    tau: f64,
    temperature: f64,
) -> Result<(f64, f64)> {
    if unlabeled.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut kept = 0usize;
    let mut conf = 0.0;
    for (i, x) in unlabeled.iter().enumerate() {
        let pl = pseudo_label(&net.predict(params, x, Mode::Eval)?, temperature, i)?;
        conf += pl.confidence;
        kept += (pl.confidence >= tau) as usize;
    }
    let n = unlabeled.len() as f64;
    Ok((kept as f64 / n, conf / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mode: SchedulerMode) -> SelfTrainConfig {
        SelfTrainConfig {
            scheduler_mode: mode,
            ..Default::default()
        }
    }

    #[test]
    fn pseudo_label_examples() {
        let pl = pseudo_label(&[2.0f64, 1.0, 0.0], 2.0, 0).unwrap();
        assert_eq!(pl.class, 0);
        // exp(1) / (exp(1) + exp(0.5) + 1)
        assert!((pl.confidence - 0.506480).abs() < 1e-6);
        let tie = pseudo_label(&[0.0f64, 0.0, 0.0], 1.0, 3).unwrap();
        assert_eq!((tie.class, tie.sample), (0, 3));
        assert!((tie.confidence - 1.0 / 3.0).abs() < 1e-12);
        for t in [0.5, 1.0, 2.0, 4.0] {
            assert_eq!(pseudo_label(&[2.0f64, 1.0, 0.0], t, 0).unwrap().class, 0);
        }
        assert!(pseudo_label(&[f64::NAN, 0.0], 1.0, 0).is_err());
        assert!(pseudo_label(&[1.0f64, 0.0], 0.0, 0).is_err());
    }

    #[test]
    fn scheduler_examples() {
        let c = cfg(SchedulerMode::Corrected);
        assert!((confidence_threshold(10, 0, 0, &c).unwrap() - 0.5).abs() < 1e-12);
        assert!((confidence_threshold(10, 10, 10, &c).unwrap() - 0.9).abs() < 1e-12);
        assert!((confidence_threshold(10, 10, 0, &c).unwrap() - 0.7).abs() < 1e-12);
        let l = cfg(SchedulerMode::PaperLiteral);
        assert!((confidence_threshold(10, 0, 0, &l).unwrap() - 0.4).abs() < 1e-12);
        assert!(confidence_threshold(10, 10, 10, &l).unwrap().abs() < 1e-12);
        assert!(confidence_threshold(0, 0, 0, &c).is_err());
        assert!(confidence_threshold(10, 3, 4, &c).is_err());
        assert!(confidence_threshold(10, 11, 4, &c).is_err());
    }

    #[test]
    fn combined_loss_examples() {
        let sup = vec![vec![0.0f64; 4], vec![0.0; 4]];
        let uns = vec![vec![3.0f64, 0.0, 0.0, 0.0]];
        let l = combined_loss(&sup, &[0, 3], &uns, &[0], &[true], 0.0).unwrap();
        assert_eq!(l.total, l.supervised);
        assert!((l.supervised - 4f64.ln()).abs() < 1e-12);
        let masked = combined_loss(&sup, &[0, 3], &uns, &[2], &[false], 1.0).unwrap();
        assert_eq!(masked.unsupervised, 0.0);
        assert!(masked.unsup_grad[0].iter().all(|&g| g == 0.0));
        assert!(combined_loss(&sup, &[0], &uns, &[0], &[true], 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SelfTrainConfig::default().validate().is_ok());
        let bad = SelfTrainConfig {
            tau_min: 0.95,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SelfTrainConfig {
            temperature: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SelfTrainConfig {
            beta: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}

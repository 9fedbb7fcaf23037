//! Attention-augmented dual-convolution classifier.
//!
//! Each block runs a temporal and a spectral convolution side by side,
//! concatenates them, fuses with a 1x1 convolution, then applies group
//! normalisation, ReLU and channel-wise (spatial) dropout. Blocks are
//! separated by 2x2 max-pooling. STC attention follows the last block and a
//! dense head maps the pooled attention output to class logits.
//!
//! Feature maps are stored channel-major as `[C][T][F]`.

mod adam;
pub mod attention;
pub mod layers;
mod network;
mod params;

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::Real;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use network::{BatchCache, Cache, Network};
pub use params::{fingerprint_of, Param, ParamSet};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ArchConfig {
    /// Output channels per block; the block count is the length.
    pub channels: Vec<usize>,
    /// Kernel length of the temporal convolution (along time).
    pub temporal_kernel: usize,
    /// Kernel length of the spectral convolution (along mel bins).
    pub spectral_kernel: usize,
    pub attention_kernel: usize,
    /// Channel-attention bottleneck divisor.
    pub attention_reduction: usize,
    pub groups: usize,
    pub dropout: f64,
    pub l2: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            channels: alloc::vec![16, 32, 48, 64],
            temporal_kernel: 7,
            spectral_kernel: 7,
            attention_kernel: 7,
            attention_reduction: 4,
            groups: 8,
            dropout: 0.1,
            l2: 1e-4,
        }
    }
}

impl ArchConfig {
    pub fn blocks(&self) -> usize {
        self.channels.len()
    }

    pub fn attention_hidden(&self, channels: usize) -> usize {
        (channels / self.attention_reduction.max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            bail!(Config, "at least one block is required");
        }
        if self.groups == 0 {
            bail!(Config, "groups must be positive");
        }
        if let Some(c) = self
            .channels
            .iter()
            .find(|&&c| c == 0 || c % self.groups != 0)
        {
            bail!(
                Config,
                "{c} channels not divisible into {} groups",
                self.groups
            );
        }
        for (name, k) in [
            ("temporal_kernel", self.temporal_kernel),
            ("spectral_kernel", self.spectral_kernel),
            ("attention_kernel", self.attention_kernel),
        ] {
            if k % 2 == 0 {
                bail!(Config, "{name} must be odd, got {k}");
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bail!(Config, "dropout must be in [0, 1)");
        }
        if !(self.l2 >= 0.0) {
            bail!(Config, "l2 must be non-negative");
        }
        Ok(())
    }
}

/// Segment shape `frames x mel_bins`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InputShape {
    pub frames: usize,
    pub mel_bins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active, masks drawn from `seed`.
    Train {
        seed: u64,
    },
}

impl Mode {
    pub(crate) fn for_item(self, i: u64) -> Self {
        match self {
            Mode::Eval => Mode::Eval,
            Mode::Train { seed } => Mode::Train {
                seed: crate::rng::derive_seed(seed, &[i]),
            },
        }
    }
}

/// Numerically stable softmax at temperature 1.
pub fn softmax<F: Real>(z: &[F]) -> Vec<F> {
    let m = z.iter().copied().fold(F::neg_infinity(), F::max);
    let e: Vec<F> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: F = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Temperature-scaled softmax `exp(z_i / T) / sum_j exp(z_j / T)`.
pub fn softmax_t<F: Real>(z: &[F], temperature: f64) -> Result<Vec<F>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        bail!(
            InvalidInput,
            "temperature must be positive, got {temperature}"
        );
    }
    let t = F::of(temperature);
    let scaled: Vec<F> = z.iter().map(|&v| v / t).collect();
    Ok(softmax(&scaled))
}

/// Cross-entropy of `softmax(z)` against class `y`, and its gradient w.r.t. `z`.
pub fn cross_entropy<F: Real>(z: &[F], y: usize) -> (F, Vec<F>) {
    let m = z.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<F>().ln();
    let p = softmax(z);
    let mut g = p;
    g[y] -= F::one();
    (lse - z[y], g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn softmax_examples() {
        let p = softmax_t(&[0.0f64, 0.0, 0.0], 3.7).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        assert!(softmax_t(&[1.0f64], 0.0).is_err());
        assert!(softmax_t(&[1.0f64], -1.0).is_err());
    }

    #[test]
    fn cross_entropy_uniform() {
        let (l, g) = cross_entropy(&[0.0f64; 4], 2);
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((g.iter().sum::<f64>()).abs() < 1e-12);
        assert!((g[2] + 0.75).abs() < 1e-12);
    }

    #[test]
    fn arch_validation() {
        assert!(ArchConfig::default().validate().is_ok());
        let bad = ArchConfig {
            channels: vec![12],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ArchConfig {
            temporal_kernel: 6,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}

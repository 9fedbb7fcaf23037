//! Audio front end: log-Mel frames, fixed-length segments and
//! segment-averaged utterance prediction.

mod fft;
pub mod mel;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // shadowed by inherent f64 methods when std is linked
use num_traits::Float;

use crate::error::{bail, Error, Result};
use crate::model::{Mode, Network, ParamSet};
use crate::Real;

pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank};

/// Raw mono utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    /// Amplitudes in `[-1, 1]`.
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub speaker_id: String,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum WindowKind {
    Hann,
    Hamming,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FeatureConfig {
    /// Expected input rate; clips at any other rate are rejected.
    pub sample_rate: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub mel_bins: usize,
    pub segment_seconds: f64,
    pub log_offset: f64,
    pub fmin: f64,
    /// Upper filterbank edge; Nyquist when unset.
    pub fmax: Option<f64>,
    pub window: WindowKind,
    /// Standardise features to zero mean and unit variance with statistics
    /// pooled over the loaded corpus.
    pub normalize: bool,
    /// Frames per segment for precomputed feature records whose frame grid
    /// is not derived from `segment_seconds` (e.g. synthetic data).
    pub segment_frames: Option<usize>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window_ms: 25.0,
            hop_ms: 10.0,
            mel_bins: 64,
            segment_seconds: 2.0,
            log_offset: 1e-6,
            fmin: 0.0,
            fmax: None,
            window: WindowKind::Hann,
            normalize: false,
            segment_frames: None,
        }
    }
}

impl FeatureConfig {
    pub fn window_len(&self) -> usize {
        (self.window_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn fmax_hz(&self) -> f64 {
        self.fmax.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    /// Number of frames produced for a clip of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        let (win, hop) = (self.window_len(), self.hop_len());
        if len <= win {
            1
        } else {
            (len - win) / hop + 1
        }
    }

    pub fn segment_frames(&self) -> usize {
        self.segment_frames.unwrap_or_else(|| {
            let len = (self.segment_seconds * self.sample_rate as f64).round() as usize;
            self.frame_count(len)
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            bail!(Config, "sample_rate must be positive");
        }
        let (win, hop) = (self.window_len(), self.hop_len());
        if hop == 0 || win < hop {
            bail!(
                Config,
                "need window >= hop > 0 (got {win} and {hop} samples)"
            );
        }
        if self.mel_bins == 0 {
            bail!(Config, "mel_bins must be >= 1");
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax_hz())
            || self.fmax_hz() > self.sample_rate as f64 / 2.0
        {
            bail!(Config, "need 0 <= fmin < fmax <= sample_rate/2");
        }
        if !(self.log_offset > 0.0 && self.log_offset.is_finite()) {
            bail!(Config, "log_offset must be a small positive number");
        }
        if !(self.segment_seconds > 0.0) || self.segment_frames == Some(0) {
            bail!(Config, "segment length must be positive");
        }
        Ok(())
    }
}

/// Row-major `[frames x mel_bins]` grid of log energies.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureTensor {
    pub frames: usize,
    pub mel_bins: usize,
    pub values: Vec<f32>,
}

impl FeatureTensor {
    pub fn new(frames: usize, mel_bins: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != frames * mel_bins {
            bail!(
                Shape,
                "{} values for a {frames}x{mel_bins} grid",
                values.len()
            );
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        Ok(Self {
            frames,
            mel_bins,
            values,
        })
    }

    pub fn filled(frames: usize, mel_bins: usize, value: f32) -> Self {
        Self {
            frames,
            mel_bins,
            values: vec![value; frames * mel_bins],
        }
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.values[t * self.mel_bins..(t + 1) * self.mel_bins]
    }
}

/// Reusable STFT + filterbank for one configuration.
pub struct LogMelExtractor {
    cfg: FeatureConfig,
    window: Vec<f64>,
    n_fft: usize,
    fft: fft::Fft,
    filterbank: MelFilterbank,
}

impl LogMelExtractor {
    pub fn new(cfg: &FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let win = cfg.window_len();
        let n_fft = win.next_power_of_two().max(2);
        // periodic windows
        let window = (0..win)
            .map(|i| {
                let phase = 2.0 * PI * i as f64 / win as f64;
                match cfg.window {
                    WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                    WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                }
            })
            .collect();
        let filterbank = MelFilterbank::new(
            cfg.mel_bins,
            n_fft,
            cfg.sample_rate as f64,
            cfg.fmin,
            cfg.fmax_hz(),
        );
        Ok(Self {
            cfg: cfg.clone(),
            window,
            n_fft,
            fft: fft::Fft::new(n_fft),
            filterbank,
        })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<FeatureTensor> {
        let cfg = &self.cfg;
        if clip.sample_rate == 0 {
            bail!(InvalidInput, "sample rate must be positive");
        }
        if clip.sample_rate != cfg.sample_rate {
            bail!(
                InvalidInput,
                "sample rate {} Hz, expected {} Hz",
                clip.sample_rate,
                cfg.sample_rate
            );
        }
        if clip.samples.is_empty() {
            return Err(Error::Empty("audio clip"));
        }
        if let Some(i) = clip.samples.iter().position(|s| !s.is_finite()) {
            bail!(InvalidInput, "non-finite sample at index {i}");
        }
        let (win, hop) = (cfg.window_len(), cfg.hop_len());
        let frames = cfg.frame_count(clip.samples.len());
        let bins = cfg.mel_bins;
        let half = self.n_fft / 2 + 1;
        let (mut re, mut im) = (vec![0.0; self.n_fft], vec![0.0; self.n_fft]);
        let mut frame = vec![0.0; win];
        let mut power = vec![0.0; half];
        let mut mel = vec![0.0; bins];
        let mut values = Vec::with_capacity(frames * bins);
        for t in 0..frames {
            let start = t * hop;
            for (i, f) in frame.iter_mut().enumerate() {
                let s = clip.samples.get(start + i).copied().unwrap_or(0.0) as f64;
                *f = s * self.window[i];
            }
            self.fft.power(&frame, &mut re, &mut im, &mut power);
            self.filterbank.apply(&power, &mut mel);
            values.extend(mel.iter().map(|&e| (e + cfg.log_offset).ln() as f32));
        }
        Ok(FeatureTensor {
            frames,
            mel_bins: bins,
            values,
        })
    }
}

/// Log-Mel frames of `clip` (one-shot; build a [`LogMelExtractor`] for many clips).
pub fn compute_logmel(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureTensor> {
    LogMelExtractor::new(cfg)?.compute(clip)
}

/// Splits frames into consecutive non-overlapping segments of
/// `cfg.segment_frames()` frames. Shorter inputs are padded with the silence
/// level `ln(log_offset)` to one segment; a trailing partial segment is dropped.
pub fn segment(frames: &FeatureTensor, cfg: &FeatureConfig) -> Result<Vec<FeatureTensor>> {
    if frames.frames == 0 {
        return Err(Error::Empty("frame sequence"));
    }
    let seg = cfg.segment_frames();
    let bins = frames.mel_bins;
    if frames.frames < seg {
        let mut t = FeatureTensor::filled(seg, bins, cfg.log_offset.ln() as f32);
        t.values[..frames.values.len()].copy_from_slice(&frames.values);
        return Ok(vec![t]);
    }
    Ok(frames
        .values
        .chunks_exact(seg * bins)
        .map(|c| FeatureTensor {
            frames: seg,
            mel_bins: bins,
            values: c.to_vec(),
        })
        .collect())
}

/// Standardises a group of tensors in place to zero mean and unit variance
/// using statistics pooled over all of them.
pub fn standardize(tensors: &mut [FeatureTensor]) {
    let n: usize = tensors.iter().map(|t| t.values.len()).sum();
    if n == 0 {
        return;
    }
    let mean = tensors
        .iter()
        .flat_map(|t| &t.values)
        .map(|&v| v as f64)
        .sum::<f64>()
        / n as f64;
    let var = tensors
        .iter()
        .flat_map(|t| &t.values)
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    let inv = 1.0 / (var.sqrt() + 1e-8);
    for t in tensors {
        for v in &mut t.values {
            *v = ((*v as f64 - mean) * inv) as f32;
        }
    }
}

/// Utterance-level class probabilities: the mean of per-segment softmax outputs.
pub fn utterance_predict<F: Real>(
    net: &Network,
    params: &ParamSet<F>,
    segments: &[FeatureTensor],
) -> Result<Vec<F>> {
    if segments.is_empty() {
        return Err(Error::Empty("segment list"));
    }
    let mut acc = vec![0.0f64; net.num_classes()];
    for seg in segments {
        let probs = crate::model::softmax(&net.predict(params, seg, Mode::Eval)?);
        for (a, p) in acc.iter_mut().zip(probs) {
            *a += p.f64();
        }
    }
    let n = segments.len() as f64;
    Ok(acc.into_iter().map(|a| F::of(a / n)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(samples: Vec<f32>) -> AudioClip {
        AudioClip {
            samples,
            sample_rate: 16_000,
            speaker_id: "s".into(),
            label: None,
        }
    }

    #[test]
    fn default_window_and_hop() {
        let cfg = FeatureConfig::default();
        assert_eq!(cfg.window_len(), 400);
        assert_eq!(cfg.hop_len(), 160);
        assert_eq!(cfg.segment_frames(), 198);
    }

    #[test]
    fn silence_is_log_offset() {
        let cfg = FeatureConfig::default();
        let f = compute_logmel(&clip(vec![0.0; 32_000]), &cfg).unwrap();
        let expect = (1e-6f64).ln() as f32;
        assert_eq!(f.frames, 198);
        assert!(f.values.iter().all(|&v| v == expect));
    }

    #[test]
    fn short_clip_gives_one_frame() {
        let cfg = FeatureConfig::default();
        let f = compute_logmel(&clip(vec![0.1; 100]), &cfg).unwrap();
        assert_eq!(f.frames, 1);
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = FeatureConfig::default();
        assert!(compute_logmel(&clip(vec![0.0, f32::NAN]), &cfg).is_err());
        assert!(compute_logmel(&clip(vec![]), &cfg).is_err());
        let mut c = clip(vec![0.0; 10]);
        c.sample_rate = 8000;
        assert!(compute_logmel(&c, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = FeatureConfig::default();
        cfg.hop_ms = 30.0;
        assert!(cfg.validate().is_err());
        let mut cfg = FeatureConfig::default();
        cfg.fmax = Some(9000.0);
        assert!(cfg.validate().is_err());
        let mut cfg = FeatureConfig::default();
        cfg.mel_bins = 0;
        assert!(cfg.validate().is_err());
    }

    fn frames_for_seconds(secs: f64) -> FeatureTensor {
        let cfg = FeatureConfig::default();
        let n = cfg.frame_count((secs * 16_000.0) as usize);
        FeatureTensor::filled(n, 64, 1.0)
    }

    #[test]
    fn segmentation_rules() {
        let cfg = FeatureConfig::default();
        let five = segment(&frames_for_seconds(5.0), &cfg).unwrap();
        assert_eq!(five.len(), 2);
        let four = segment(&frames_for_seconds(4.0), &cfg).unwrap();
        assert_eq!(four.len(), 2);
        assert!(four.iter().all(|s| s.values.iter().all(|&v| v == 1.0)));
        let short = segment(&frames_for_seconds(1.2), &cfg).unwrap();
        assert_eq!(short.len(), 1);
        assert_eq!(short[0].frames, 198);
        let real = cfg.frame_count(19_200);
        assert!(short[0].values[..real * 64].iter().all(|&v| v == 1.0));
        assert!(short[0].values[real * 64..]
            .iter()
            .all(|&v| v == (1e-6f64).ln() as f32));
    }

    #[test]
    fn standardize_moments() {
        let mut ts = vec![
            FeatureTensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            FeatureTensor::new(1, 2, vec![5.0, 6.0]).unwrap(),
        ];
        standardize(&mut ts);
        let all: Vec<f64> = ts
            .iter()
            .flat_map(|t| &t.values)
            .map(|&v| v as f64)
            .collect();
        let m = all.iter().sum::<f64>() / 6.0;
        let v = all.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 6.0;
        assert!(m.abs() < 1e-6 && (v - 1.0).abs() < 1e-5);
    }
}

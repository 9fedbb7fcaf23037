use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

#[allow(unused_imports)] // shadowed by inherent f64 methods when std is linked
use num_traits::Float;
use rand::Rng;

use super::{Dataset, Utterance, EMOTIONS};
use crate::error::{bail, Result};
use crate::features::FeatureTensor;
use crate::rng::{normal, rng_for};

const SPEAKER_TAG: u64 = 0x5be4;
const SAMPLE_TAG: u64 = 0x5a3e;

/// Recipe for a synthetic log-Mel-like corpus.
///
/// Class `c` combines a spectral band position with a temporal ripple rate;
/// the ripple phase is random per sample, so the rate is not visible to a
/// linear read-out of raw pixels. Each speaker applies its own gain, level
/// and band shift. Consecutive speaker pairs share a session.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SynthSpec {
    pub num_classes: usize,
    /// Total per class, dealt round-robin over speakers.
    pub samples_per_class: usize,
    pub speakers: usize,
    pub frames: usize,
    pub mel_bins: usize,
    pub segments_per_utterance: usize,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    /// Standard deviation of the per-speaker band shift, in bins.
    pub speaker_shift: f64,
    /// Standard deviation of the per-utterance band offset, in bins.
    pub jitter: f64,
    /// Class-independent rippled bands placed at random per sample.
    pub distractors: usize,
    /// Distractor amplitude relative to the class band.
    pub distractor_gain: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            samples_per_class: 100,
            speakers: 8,
            frames: 32,
            mel_bins: 32,
            segments_per_utterance: 1,
            noise: 0.6,
            speaker_shift: 1.5,
            jitter: 0.5,
            distractors: 0,
            distractor_gain: 0.7,
            seed: 0,
        }
    }
}

struct Speaker {
    gain: f64,
    level: f64,
    shift: f64,
}

pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset> {
    if spec.num_classes < 2 {
        bail!(InvalidInput, "need at least two classes");
    }
    if spec.samples_per_class == 0 || spec.speakers == 0 || spec.segments_per_utterance == 0 {
        bail!(
            InvalidInput,
            "samples, speakers and segments must be positive"
        );
    }
    if spec.frames < 4 || spec.mel_bins < 4 {
        bail!(InvalidInput, "tensors must be at least 4x4");
    }
    let (t_len, f_len) = (spec.frames, spec.mel_bins);
    let bands = (spec.num_classes as f64).sqrt().ceil() as usize;
    let rates = spec.num_classes.div_ceil(bands);
    let width = f_len as f64 / 8.0;

    let speakers: Vec<Speaker> = (0..spec.speakers)
        .map(|s| {
            let mut rng = rng_for(spec.seed, &[SPEAKER_TAG, s as u64]);
            Speaker {
                gain: (1.0 + 0.2 * normal(&mut rng)).max(0.3),
                level: 0.3 * normal(&mut rng),
                shift: spec.speaker_shift * normal(&mut rng),
            }
        })
        .collect();

    let mut samples = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for c in 0..spec.num_classes {
        let band = c % bands;
        let rate = c / bands;
        let center = f_len as f64 * (0.25 + 0.5 * band as f64 / (bands - 1).max(1) as f64);
        let cycles = 2.0 + 4.0 * rate as f64;
        for n in 0..spec.samples_per_class {
            let s = n % spec.speakers;
            let spk = &speakers[s];
            let mut rng = rng_for(spec.seed, &[SAMPLE_TAG, c as u64, n as u64]);
            let mu = center + spk.shift + spec.jitter * normal(&mut rng);
            let segments = (0..spec.segments_per_utterance)
                .map(|_| {
                    let phase = rng.gen::<f64>() * TAU;
                    let amp = 2.0 * spk.gain * (1.0 + 0.1 * normal(&mut rng));
                    let mut bands = vec![(mu, cycles, phase, amp)];
                    for _ in 0..spec.distractors {
                        let rate = rng.gen_range(0..rates);
                        bands.push((
                            rng.gen::<f64>() * f_len as f64,
                            2.0 + 4.0 * rate as f64,
                            rng.gen::<f64>() * TAU,
                            amp * spec.distractor_gain,
                        ));
                    }
                    let mut values = vec![spk.level; t_len * f_len];
                    for &(mu, cycles, phase, amp) in &bands {
                        for t in 0..t_len {
                            let ripple =
                                1.0 + 0.8 * (TAU * cycles * t as f64 / t_len as f64 + phase).sin();
                            for f in 0..f_len {
                                let d = (f as f64 - mu) / width;
                                values[t * f_len + f] += amp * (-0.5 * d * d).exp() * ripple;
                            }
                        }
                    }
                    let values = values
                        .into_iter()
                        .map(|v| (v + spec.noise * normal(&mut rng)) as f32)
                        .collect();
                    FeatureTensor {
                        frames: t_len,
                        mel_bins: f_len,
                        values,
                    }
                })
                .collect();
            samples.push(Utterance {
                id: format!("spk{s:02}_c{c}_{n:04}"),
                speaker: format!("spk{s:02}"),
                session: format!("ses{:02}", s / 2),
                label: c,
                segments,
            });
        }
    }
    let class_names: Vec<String> = if spec.num_classes == EMOTIONS.len() {
        EMOTIONS.iter().map(|s| s.to_string()).collect()
    } else {
        (0..spec.num_classes).map(|c| format!("class{c}")).collect()
    };
    Dataset::new(samples, class_names)
}

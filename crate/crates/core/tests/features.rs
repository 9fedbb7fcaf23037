use fedser_core::features::*;
use fedser_core::model::{ArchConfig, InputShape, Network};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn clip(samples: Vec<f32>) -> AudioClip {
    AudioClip {
        samples,
        sample_rate: 16_000,
        speaker_id: "spk".into(),
        label: None,
    }
}

fn tone(hz: f64, secs: f64) -> Vec<f32> {
    let n = (secs * 16_000.0) as usize;
    (0..n)
        .map(|i| (0.5 * (2.0 * std::f64::consts::PI * hz * i as f64 / 16_000.0).sin()) as f32)
        .collect()
}

/// Filter centres rebuilt from scratch: equally spaced points on the HTK mel
/// axis between fmin and fmax, outer two dropped.
fn oracle_centers(bins: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let (lo, hi) = (mel(fmin), mel(fmax));
    let step = (hi - lo) / (bins + 1) as f64;
    (1..=bins).map(|i| hz(lo + step * i as f64)).collect()
}

fn nearest(centers: &[f64], hz: f64) -> usize {
    let mut best = 0;
    for (i, c) in centers.iter().enumerate() {
        if (c - hz).abs() < (centers[best] - hz).abs() {
            best = i;
        }
    }
    best
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[test]
fn tone_lands_in_nearest_filter() {
    let cfg = FeatureConfig::default();
    let ex = LogMelExtractor::new(&cfg).unwrap();
    let centers = oracle_centers(64, 0.0, 8000.0);
    for (a, b) in centers.iter().zip(&ex.filterbank().centers) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
    for hz in [440.0, 1000.0, 3000.0] {
        let want = nearest(&centers, hz);
        let f = ex.compute(&clip(tone(hz, 1.0))).unwrap();
        for t in 0..f.frames {
            assert_eq!(argmax(f.frame(t)), want, "{hz} Hz, frame {t}");
        }
    }
}

#[test]
fn silence_is_constant_log_offset() {
    for offset in [1e-6, 1e-3] {
        let cfg = FeatureConfig {
            log_offset: offset,
            ..Default::default()
        };
        let f = compute_logmel(&clip(vec![0.0; 8000]), &cfg).unwrap();
        assert!(f.values.iter().all(|&v| v == offset.ln() as f32));
    }
}

/// Counts frame start positions directly: a frame starts every hop while a
/// full window fits, and there is always at least one.
fn counted_frames(len: usize, win: usize, hop: usize) -> usize {
    let mut n = 0;
    let mut start = 0;
    while start + win <= len {
        n += 1;
        start += hop;
    }
    n.max(1)
}

#[test]
fn frame_count_closed_form() {
    let cfg = FeatureConfig::default();
    let ex = LogMelExtractor::new(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let len = rng.gen_range(1..48_000);
        let want = counted_frames(len, 400, 160);
        assert_eq!(cfg.frame_count(len), want, "len {len}");
        let samples = (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect();
        assert_eq!(ex.compute(&clip(samples)).unwrap().frames, want);
    }
}

#[test]
fn short_utterance_padded_to_one_segment() {
    let cfg = FeatureConfig::default();
    let f = compute_logmel(&clip(tone(300.0, 1.2)), &cfg).unwrap();
    let segs = segment(&f, &cfg).unwrap();
    assert_eq!(segs.len(), 1);
    assert_eq!(segs[0].frames, 198);
    assert_eq!(&segs[0].values[..f.values.len()], &f.values[..]);
    let silence = (1e-6f64).ln() as f32;
    assert!(segs[0].values[f.values.len()..]
        .iter()
        .all(|&v| v == silence));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trailing_zeros_keep_existing_frames(len in 400usize..6000, pad in 0usize..160, seed in any::<u64>()) {
        let cfg = FeatureConfig::default();
        let ex = LogMelExtractor::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<f32> = (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let base = ex.compute(&clip(samples.clone())).unwrap();
        let mut longer = samples;
        longer.resize(len + pad, 0.0);
        let ext = ex.compute(&clip(longer)).unwrap();
        prop_assert!(ext.frames == base.frames || ext.frames == base.frames + 1);
        if (len - 400) % 160 + pad < 160 {
            prop_assert_eq!(ext.frames, base.frames);
        }
        prop_assert_eq!(&ext.values[..base.values.len()], &base.values[..]);
    }

    #[test]
    fn utterance_prediction_ignores_segment_order(seed in any::<u64>(), n in 1usize..6) {
        let net = Network::new(
            ArchConfig { channels: vec![4, 8], groups: 2, ..Default::default() },
            InputShape { frames: 8, mel_bins: 8 },
            3,
        )
        .unwrap();
        let params = net.init::<f64>(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut segs: Vec<FeatureTensor> = (0..n)
            .map(|_| FeatureTensor::new(8, 8, (0..64).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap())
            .collect();
        let p = utterance_predict(&net, &params, &segs).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        segs.reverse();
        segs.rotate_left(n / 2);
        let q = utterance_predict(&net, &params, &segs).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

//! HTK mel scale and area-normalised triangular filterbank.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent f64 methods when std is linked
use num_traits::Float;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Dense `[mel_bins x (n_fft/2 + 1)]` filterbank.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub mel_bins: usize,
    pub fft_bins: usize,
    /// Filter centres in Hz.
    pub centers: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(mel_bins: usize, n_fft: usize, sample_rate: f64, fmin: f64, fmax: f64) -> Self {
        let fft_bins = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..mel_bins + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (mel_bins + 1) as f64))
            .collect();
        let bin_hz = sample_rate / n_fft as f64;
        let mut weights = vec![0.0; mel_bins * fft_bins];
        for m in 0..mel_bins {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let row = &mut weights[m * fft_bins..(m + 1) * fft_bins];
            for (k, w) in row.iter_mut().enumerate() {
                let f = k as f64 * bin_hz;
                *w = if f > l && f <= c {
                    (f - l) / (c - l)
                } else if f > c && f < r {
                    (r - f) / (r - c)
                } else {
                    0.0
                };
            }
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|w| *w /= sum);
            } else {
                // Filter narrower than the FFT bin spacing: collapse onto the nearest bin.
                let k = ((c / bin_hz).round() as usize).min(fft_bins - 1);
                row[k] = 1.0;
            }
        }
        Self {
            mel_bins,
            fft_bins,
            centers: edges[1..=mel_bins].to_vec(),
            weights,
        }
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.fft_bins..(m + 1) * self.fft_bins]
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            *o = self.row(m).iter().zip(power).map(|(w, p)| w * p).sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_roundtrip() {
        for hz in [0.0, 100.0, 440.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn rows_normalised_and_columns_covered() {
        let fb = MelFilterbank::new(64, 512, 16000.0, 0.0, 8000.0);
        for m in 0..64 {
            let s: f64 = fb.row(m).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        let bin_hz = 16000.0 / 512.0;
        for k in 0..fb.fft_bins {
            let f = k as f64 * bin_hz;
            if f > fb.centers[0] && f < fb.centers[63] {
                let col: f64 = (0..64).map(|m| fb.row(m)[k]).sum();
                assert!(col > 0.0, "bin {k} uncovered");
            }
        }
    }
}

//! Iterative radix-2 FFT, enough for power-spectrum frames.

use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // shadowed by inherent f64 methods when std is linked
use num_traits::Float;

pub(crate) struct Fft {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
    rev: Vec<usize>,
}

impl Fft {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two() && n >= 2);
        let bits = n.trailing_zeros();
        let rev = (0..n)
            .map(|i| i.reverse_bits() >> (usize::BITS - bits))
            .collect();
        let half = n / 2;
        let cos = (0..half)
            .map(|k| (2.0 * PI * k as f64 / n as f64).cos())
            .collect();
        let sin = (0..half)
            .map(|k| -(2.0 * PI * k as f64 / n as f64).sin())
            .collect();
        Self { n, cos, sin, rev }
    }

    /// Forward transform in place.
    pub fn run(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.n;
        debug_assert!(re.len() == n && im.len() == n);
        for i in 0..n {
            let j = self.rev[i];
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..len / 2 {
                    let (wr, wi) = (self.cos[k * step], self.sin[k * step]);
                    let a = start + k;
                    let b = a + len / 2;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len <<= 1;
        }
    }

    /// `|X_k|^2` for `k = 0..=n/2` of a real input (zero-padded to `n`).
    pub fn power(&self, input: &[f64], re: &mut [f64], im: &mut [f64], out: &mut [f64]) {
        re.fill(0.0);
        im.fill(0.0);
        re[..input.len()].copy_from_slice(input);
        self.run(re, im);
        for (k, o) in out.iter_mut().enumerate() {
            *o = re[k] * re[k] + im[k] * im[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_dft() {
        let n = 16;
        let x: Vec<f64> = (0..n).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let fft = Fft::new(n);
        let (mut re, mut im) = (x.clone(), alloc::vec![0.0; n]);
        fft.run(&mut re, &mut im);
        for k in 0..n {
            let (mut sr, mut si) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                sr += v * ang.cos();
                si += v * ang.sin();
            }
            assert!((re[k] - sr).abs() < 1e-12 && (im[k] - si).abs() < 1e-12);
        }
    }
}

//! Forward and backward kernels over channel-major `[C][T][F]` feature maps.

use alloc::vec;
use alloc::vec::Vec;

use crate::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Map<F> {
    pub c: usize,
    pub t: usize,
    pub f: usize,
    pub data: Vec<F>,
}

impl<F: Real> Map<F> {
    pub fn zeros(c: usize, t: usize, f: usize) -> Self {
        Self {
            c,
            t,
            f,
            data: vec![F::zero(); c * t * f],
        }
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.t * self.f
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[F] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [F] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }
}

#[inline]
pub(crate) fn axpy<F: Real>(y: &mut [F], a: F, x: &[F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Eight interleaved partial sums, so the loop vectorises.
#[inline]
pub(crate) fn dot<F: Real>(x: &[F], y: &[F]) -> F {
    let n = x.len().min(y.len());
    let (x, y) = (&x[..n], &y[..n]);
    let mut acc = [F::zero(); 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] += a[l] * b[l];
        }
    }
    let mut tail = F::zero();
    for (&a, &b) in xr.iter().zip(yr) {
        tail += a * b;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Swaps the time and frequency axes.
pub(crate) fn transpose<F: Real>(x: &Map<F>) -> Map<F> {
    let mut out = Map::zeros(x.c, x.f, x.t);
    for c in 0..x.c {
        let (src, dst) = (x.channel(c), out.channel_mut(c));
        for t in 0..x.t {
            for f in 0..x.f {
                dst[f * x.t + t] = src[t * x.f + f];
            }
        }
    }
    out
}

/// Axis a 1-D kernel slides along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Time,
    Freq,
}

/// Output positions `[lo, hi)` that read an in-range input for tap offset `shift`.
#[inline]
fn tap_range(shift: isize, n: usize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (n as isize - shift).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

/// Zero-padded "same" convolution with a 1-D kernel along `axis`.
/// Weights are `[cout][cin][k]`.
pub fn conv1d<F: Real>(x: &Map<F>, w: &[F], b: &[F], cout: usize, k: usize, axis: Axis) -> Map<F> {
    if axis == Axis::Freq {
        return transpose(&conv1d(&transpose(x), w, b, cout, k, Axis::Time));
    }
    let (cin, tn, fnn) = (x.c, x.t, x.f);
    let r = (k / 2) as isize;
    let mut out = Map::zeros(cout, tn, fnn);
    for o in 0..cout {
        let oc = out.channel_mut(o);
        oc.fill(b[o]);
        for i in 0..cin {
            let xc = x.channel(i);
            for kk in 0..k {
                let wv = w[(o * cin + i) * k + kk];
                let shift = kk as isize - r;
                let (t0, t1) = tap_range(shift, tn);
                let src = ((t0 as isize + shift) as usize) * fnn;
                axpy(
                    &mut oc[t0 * fnn..t1 * fnn],
                    wv,
                    &xc[src..src + (t1 - t0) * fnn],
                );
            }
        }
    }
    out
}

/// Accumulates kernel/bias gradients of [`conv1d`] and, when `dx` is given,
/// the input gradient.
pub fn conv1d_backward<F: Real>(
    x: &Map<F>,
    w: &[F],
    dout: &Map<F>,
    k: usize,
    axis: Axis,
    dw: &mut [F],
    db: &mut [F],
    dx: Option<&mut Map<F>>,
) {
    if axis == Axis::Freq {
        let (xt, dt) = (transpose(x), transpose(dout));
        match dx {
            Some(dx) => {
                let mut dxt = Map::zeros(xt.c, xt.t, xt.f);
                conv1d_backward(&xt, w, &dt, k, Axis::Time, dw, db, Some(&mut dxt));
                for (a, b) in dx.data.iter_mut().zip(transpose(&dxt).data) {
                    *a += b;
                }
            }
            None => conv1d_backward(&xt, w, &dt, k, Axis::Time, dw, db, None),
        }
        return;
    }
    let mut dx = dx;
    let (cin, tn, fnn, cout) = (x.c, x.t, x.f, dout.c);
    let r = (k / 2) as isize;
    for o in 0..cout {
        let dc = dout.channel(o);
        db[o] += dc.iter().copied().sum::<F>();
        for i in 0..cin {
            let xc = x.channel(i);
            for kk in 0..k {
                let widx = (o * cin + i) * k + kk;
                let shift = kk as isize - r;
                let (t0, t1) = tap_range(shift, tn);
                let src = ((t0 as isize + shift) as usize) * fnn;
                let len = (t1 - t0) * fnn;
                let d = &dc[t0 * fnn..t0 * fnn + len];
                dw[widx] += dot(d, &xc[src..src + len]);
                if let Some(dx) = dx.as_deref_mut() {
                    axpy(&mut dx.channel_mut(i)[src..src + len], w[widx], d);
                }
            }
        }
    }
}

/// 1x1 convolution, weights `[cout][cin]`.
pub fn pointwise<F: Real>(x: &Map<F>, w: &[F], b: &[F], cout: usize) -> Map<F> {
    let mut out = Map::zeros(cout, x.t, x.f);
    for o in 0..cout {
        let oc = out.channel_mut(o);
        oc.fill(b[o]);
        for i in 0..x.c {
            axpy(oc, w[o * x.c + i], x.channel(i));
        }
    }
    out
}

pub fn pointwise_backward<F: Real>(
    x: &Map<F>,
    w: &[F],
    dout: &Map<F>,
    dw: &mut [F],
    db: &mut [F],
) -> Map<F> {
    let cin = x.c;
    let mut dx = Map::zeros(cin, x.t, x.f);
    for o in 0..dout.c {
        let dc = dout.channel(o);
        db[o] += dc.iter().copied().sum::<F>();
        for i in 0..cin {
            dw[o * cin + i] += dot(dc, x.channel(i));
            axpy(dx.channel_mut(i), w[o * cin + i], dc);
        }
    }
    dx
}

pub const GROUPNORM_EPS: f64 = 1e-5;

/// Group normalisation output plus what the backward pass needs.
pub struct GroupNormOut<F> {
    pub y: Map<F>,
    pub xhat: Map<F>,
    pub inv_std: Vec<F>,
}

pub fn group_norm<F: Real>(x: &Map<F>, gamma: &[F], beta: &[F], groups: usize) -> GroupNormOut<F> {
    let cpg = x.c / groups;
    let p = x.plane();
    let m = F::of((cpg * p) as f64);
    let mut xhat = Map::zeros(x.c, x.t, x.f);
    let mut y = Map::zeros(x.c, x.t, x.f);
    let mut inv_std = Vec::with_capacity(groups);
    for g in 0..groups {
        let span = g * cpg * p..(g + 1) * cpg * p;
        let xs = &x.data[span.clone()];
        let mean = xs.iter().copied().sum::<F>() / m;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / m;
        let inv = F::one() / (var + F::of(GROUPNORM_EPS)).sqrt();
        inv_std.push(inv);
        for (h, &v) in xhat.data[span].iter_mut().zip(xs) {
            *h = (v - mean) * inv;
        }
    }
    for c in 0..x.c {
        let (gm, bt) = (gamma[c], beta[c]);
        for (o, &h) in y.channel_mut(c).iter_mut().zip(xhat.channel(c)) {
            *o = gm * h + bt;
        }
    }
    GroupNormOut { y, xhat, inv_std }
}

pub fn group_norm_backward<F: Real>(
    dy: &Map<F>,
    xhat: &Map<F>,
    inv_std: &[F],
    gamma: &[F],
    dgamma: &mut [F],
    dbeta: &mut [F],
) -> Map<F> {
    let groups = inv_std.len();
    let cpg = dy.c / groups;
    let p = dy.plane();
    let m = F::of((cpg * p) as f64);
    let mut dx = Map::zeros(dy.c, dy.t, dy.f);
    for c in 0..dy.c {
        dgamma[c] += dot(dy.channel(c), xhat.channel(c));
        dbeta[c] += dy.channel(c).iter().copied().sum::<F>();
    }
    for g in 0..groups {
        // dxhat = dy * gamma; dx = inv/M * (M dxhat - sum(dxhat) - xhat * sum(dxhat xhat))
        let (mut s1, mut s2) = (F::zero(), F::zero());
        for c in g * cpg..(g + 1) * cpg {
            let gm = gamma[c];
            for (&d, &h) in dy.channel(c).iter().zip(xhat.channel(c)) {
                s1 += d * gm;
                s2 += d * gm * h;
            }
        }
        let inv = inv_std[g];
        for c in g * cpg..(g + 1) * cpg {
            let gm = gamma[c];
            let (dyc, hc) = (dy.channel(c), xhat.channel(c));
            for ((o, &d), &h) in dx.channel_mut(c).iter_mut().zip(dyc).zip(hc) {
                *o = inv / m * (m * d * gm - s1 - h * s2);
            }
        }
    }
    dx
}

/// 2x2 max-pooling with stride 2 (odd trailing rows/columns dropped).
/// Returns the pooled map and, per output cell, the flat index of the winner.
pub fn max_pool2<F: Real>(x: &Map<F>) -> (Map<F>, Vec<u32>) {
    let (to, fo) = (x.t / 2, x.f / 2);
    let mut out = Map::zeros(x.c, to, fo);
    let mut arg = Vec::with_capacity(x.c * to * fo);
    for c in 0..x.c {
        let base = c * x.plane();
        for t in 0..to {
            for f in 0..fo {
                let mut best = base + (2 * t) * x.f + 2 * f;
                for (dt, df) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * t + dt) * x.f + 2 * f + df;
                    if x.data[idx] > x.data[best] {
                        best = idx;
                    }
                }
                out.data[(c * to + t) * fo + f] = x.data[best];
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward<F: Real>(
    dout: &Map<F>,
    arg: &[u32],
    c: usize,
    t: usize,
    f: usize,
) -> Map<F> {
    let mut dx = Map::zeros(c, t, f);
    for (&d, &i) in dout.data.iter().zip(arg) {
        dx.data[i as usize] += d;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(c: usize, t: usize, f: usize, seed: u64) -> Map<f64> {
        let mut s = seed;
        let data = (0..c * t * f)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
            })
            .collect();
        Map { c, t, f, data }
    }

    /// Direct-index reference of the same-padded 1-D convolution.
    fn conv_ref(x: &Map<f64>, w: &[f64], b: &[f64], cout: usize, k: usize, axis: Axis) -> Map<f64> {
        let r = (k / 2) as isize;
        let mut out = Map::zeros(cout, x.t, x.f);
        for o in 0..cout {
            for t in 0..x.t {
                for f in 0..x.f {
                    let mut acc = b[o];
                    for i in 0..x.c {
                        for kk in 0..k {
                            let s = kk as isize - r;
                            let (tt, ff) = match axis {
                                Axis::Time => (t as isize + s, f as isize),
                                Axis::Freq => (t as isize, f as isize + s),
                            };
                            if tt >= 0 && ff >= 0 && (tt as usize) < x.t && (ff as usize) < x.f {
                                acc += w[(o * x.c + i) * k + kk]
                                    * x.data[(i * x.t + tt as usize) * x.f + ff as usize];
                            }
                        }
                    }
                    out.data[(o * x.t + t) * x.f + f] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_reference() {
        let x = map(3, 5, 6, 1);
        let w = map(2, 3, 7, 2).data;
        let b = [0.1, -0.2];
        for axis in [Axis::Time, Axis::Freq] {
            let a = conv1d(&x, &w, &b, 2, 7, axis);
            let r = conv_ref(&x, &w, &b, 2, 7, axis);
            for (u, v) in a.data.iter().zip(&r.data) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <dout, conv(x)> is linear in x and w; check via the adjoint identity.
        let x = map(2, 4, 5, 3);
        let w = map(3, 2, 3, 4).data;
        let b = [0.0; 3];
        let dout = map(3, 4, 5, 5);
        for axis in [Axis::Time, Axis::Freq] {
            let y = conv1d(&x, &w, &b, 3, 3, axis);
            let lhs: f64 = dot(&y.data, &dout.data);
            let mut dw = vec![0.0; w.len()];
            let mut db = vec![0.0; 3];
            let mut dx = Map::zeros(2, 4, 5);
            conv1d_backward(&x, &w, &dout, 3, axis, &mut dw, &mut db, Some(&mut dx));
            assert!((lhs - dot(&dx.data, &x.data)).abs() < 1e-10);
            assert!((lhs - dot(&dw, &w)).abs() < 1e-10);
        }
    }

    #[test]
    fn group_norm_statistics() {
        let mut x = map(8, 6, 5, 9);
        x.data.iter_mut().for_each(|v| *v *= 4.0);
        let gamma = [1.0; 8];
        let beta = [0.0; 8];
        let out = group_norm(&x, &gamma, &beta, 4);
        for g in 0..4 {
            let s = &out.xhat.data[g * 60..(g + 1) * 60];
            let mean = s.iter().sum::<f64>() / 60.0;
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 60.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn pool_picks_max() {
        let x = Map {
            c: 1,
            t: 2,
            f: 3,
            data: vec![1.0, 5.0, 9.0, 2.0, 3.0, 0.0],
        };
        let (y, arg) = max_pool2(&x);
        assert_eq!((y.t, y.f), (1, 1));
        assert_eq!(y.data, vec![5.0]);
        assert_eq!(arg, vec![1]);
        let dx = max_pool2_backward(
            &Map {
                c: 1,
                t: 1,
                f: 1,
                data: vec![2.0],
            },
            &arg,
            1,
            2,
            3,
        );
        assert_eq!(dx.data, vec![0.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
    }
}

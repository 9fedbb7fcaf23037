//! Spectro-temporal-channel (STC) attention.
//!
//! For a feature map `x[c][t][f]`:
//!
//! - channel map `a[c] = tanh(W2 relu(W1 gap(x) + b1) + b2)`;
//! - the channel-wise mean and max planes are stacked and convolved once along
//!   time (`st[t][f]`) and once along frequency (`sf[t][f]`), with edge
//!   replication at the borders;
//! - scores `s[c][t][f] = a[c] * st[t][f] * sf[t][f]` are softmax-normalised
//!   over all `(t, f)` positions of each channel;
//! - the output is `w[c][t][f] * x[c][t][f]`.

use alloc::vec;
use alloc::vec::Vec;

use super::layers::{axpy, Map};
use crate::Real;

/// Borrowed attention weights. Shapes: `fc1_w [hidden][C]`, `fc2_w [C][hidden]`,
/// `time_w` and `freq_w` are `[2][k]` over the (mean, max) planes.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams<'a, F> {
    pub fc1_w: &'a [F],
    pub fc1_b: &'a [F],
    pub fc2_w: &'a [F],
    pub fc2_b: &'a [F],
    pub time_w: &'a [F],
    pub time_b: &'a [F],
    pub freq_w: &'a [F],
    pub freq_b: &'a [F],
    pub hidden: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads<F> {
    pub fc1_w: Vec<F>,
    pub fc1_b: Vec<F>,
    pub fc2_w: Vec<F>,
    pub fc2_b: Vec<F>,
    pub time_w: Vec<F>,
    pub time_b: Vec<F>,
    pub freq_w: Vec<F>,
    pub freq_b: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    x: Map<F>,
    gap: Vec<F>,
    hidden_pre: Vec<F>,
    chan: Vec<F>,
    /// `[2][T*F]`: channel-wise mean then max.
    stack: Vec<F>,
    argmax: Vec<u32>,
    st: Vec<F>,
    sf: Vec<F>,
    weights: Vec<F>,
}

impl<F> AttentionCache<F> {
    /// Softmax weights `[C][T*F]`.
    pub fn weights(&self) -> &[F] {
        &self.weights
    }
}

/// Edge-replicated 1-D convolution of the two-plane stack into one plane.
fn stack_conv<F: Real>(
    stack: &[F],
    t: usize,
    f: usize,
    w: &[F],
    b: F,
    k: usize,
    time_axis: bool,
) -> Vec<F> {
    let p = t * f;
    let r = (k / 2) as isize;
    let mut out = vec![b; p];
    for plane in 0..2 {
        let s = &stack[plane * p..(plane + 1) * p];
        for kk in 0..k {
            let wv = w[plane * k + kk];
            let shift = kk as isize - r;
            if time_axis {
                for ti in 0..t {
                    let src = (ti as isize + shift).clamp(0, t as isize - 1) as usize;
                    axpy(
                        &mut out[ti * f..(ti + 1) * f],
                        wv,
                        &s[src * f..(src + 1) * f],
                    );
                }
            } else {
                for ti in 0..t {
                    let row = ti * f;
                    for fi in 0..f {
                        let src = (fi as isize + shift).clamp(0, f as isize - 1) as usize;
                        out[row + fi] += wv * s[row + src];
                    }
                }
            }
        }
    }
    out
}

fn stack_conv_backward<F: Real>(
    stack: &[F],
    t: usize,
    f: usize,
    w: &[F],
    dout: &[F],
    k: usize,
    time_axis: bool,
    dw: &mut [F],
    dstack: &mut [F],
) -> F {
    let p = t * f;
    let r = (k / 2) as isize;
    for plane in 0..2 {
        let s = &stack[plane * p..(plane + 1) * p];
        for kk in 0..k {
            let wv = w[plane * k + kk];
            let shift = kk as isize - r;
            let mut acc = F::zero();
            for ti in 0..t {
                for fi in 0..f {
                    let src = if time_axis {
                        (ti as isize + shift).clamp(0, t as isize - 1) as usize * f + fi
                    } else {
                        ti * f + (fi as isize + shift).clamp(0, f as isize - 1) as usize
                    };
                    let d = dout[ti * f + fi];
                    acc += d * s[src];
                    dstack[plane * p + src] += wv * d;
                }
            }
            dw[plane * k + kk] += acc;
        }
    }
    dout.iter().copied().sum()
}

pub fn stc_attention<F: Real>(
    x: &Map<F>,
    p: &AttentionParams<'_, F>,
) -> (Map<F>, AttentionCache<F>) {
    let (c, t, f) = (x.c, x.t, x.f);
    let plane = t * f;
    let inv_p = F::of(1.0 / plane as f64);

    let gap: Vec<F> = (0..c)
        .map(|ch| x.channel(ch).iter().copied().sum::<F>() * inv_p)
        .collect();
    let hidden_pre: Vec<F> = (0..p.hidden)
        .map(|h| p.fc1_b[h] + (0..c).map(|ch| p.fc1_w[h * c + ch] * gap[ch]).sum::<F>())
        .collect();
    let chan: Vec<F> = (0..c)
        .map(|ch| {
            let z = p.fc2_b[ch]
                + (0..p.hidden)
                    .map(|h| p.fc2_w[ch * p.hidden + h] * hidden_pre[h].max(F::zero()))
                    .sum::<F>();
            z.tanh()
        })
        .collect();

    let mut stack = vec![F::zero(); 2 * plane];
    let mut argmax = vec![0u32; plane];
    let inv_c = F::of(1.0 / c as f64);
    for i in 0..plane {
        let (mut sum, mut best, mut arg) = (F::zero(), x.data[i], 0u32);
        for ch in 0..c {
            let v = x.data[ch * plane + i];
            sum += v;
            if v > best {
                best = v;
                arg = ch as u32;
            }
        }
        stack[i] = sum * inv_c;
        stack[plane + i] = best;
        argmax[i] = arg;
    }
    let st = stack_conv(&stack, t, f, p.time_w, p.time_b[0], p.kernel, true);
    let sf = stack_conv(&stack, t, f, p.freq_w, p.freq_b[0], p.kernel, false);

    let mut weights = vec![F::zero(); c * plane];
    let mut y = Map::zeros(c, t, f);
    for ch in 0..c {
        let wc = &mut weights[ch * plane..(ch + 1) * plane];
        let a = chan[ch];
        let mut mx = F::neg_infinity();
        for i in 0..plane {
            wc[i] = a * st[i] * sf[i];
            mx = mx.max(wc[i]);
        }
        let mut z = F::zero();
        for v in wc.iter_mut() {
            *v = (*v - mx).exp();
            z += *v;
        }
        let inv_z = F::one() / z;
        let (xc, yc) = (x.channel(ch), &mut y.data[ch * plane..(ch + 1) * plane]);
        for i in 0..plane {
            wc[i] *= inv_z;
            yc[i] = wc[i] * xc[i];
        }
    }
    let cache = AttentionCache {
        x: x.clone(),
        gap,
        hidden_pre,
        chan,
        stack,
        argmax,
        st,
        sf,
        weights,
    };
    (y, cache)
}

pub fn stc_attention_backward<F: Real>(
    p: &AttentionParams<'_, F>,
    cache: &AttentionCache<F>,
    dy: &Map<F>,
) -> (Map<F>, AttentionGrads<F>) {
    let x = &cache.x;
    let (c, t, f) = (x.c, x.t, x.f);
    let plane = t * f;
    let k = p.kernel;
    let mut dx = Map::zeros(c, t, f);
    let mut g = AttentionGrads {
        fc1_w: vec![F::zero(); p.hidden * c],
        fc1_b: vec![F::zero(); p.hidden],
        fc2_w: vec![F::zero(); c * p.hidden],
        fc2_b: vec![F::zero(); c],
        time_w: vec![F::zero(); 2 * k],
        time_b: vec![F::zero(); 1],
        freq_w: vec![F::zero(); 2 * k],
        freq_b: vec![F::zero(); 1],
    };

    let mut dchan = vec![F::zero(); c];
    let mut dst = vec![F::zero(); plane];
    let mut dsf = vec![F::zero(); plane];
    let mut ds = vec![F::zero(); plane];
    for ch in 0..c {
        let wc = &cache.weights[ch * plane..(ch + 1) * plane];
        let (xc, dyc) = (x.channel(ch), dy.channel(ch));
        let dxc = dx.channel_mut(ch);
        // dw = dy * x; ds = w * (dw - <w, dw>)
        let mut inner = F::zero();
        for i in 0..plane {
            dxc[i] = dyc[i] * wc[i];
            inner += wc[i] * dyc[i] * xc[i];
        }
        let a = cache.chan[ch];
        let mut da = F::zero();
        for i in 0..plane {
            ds[i] = wc[i] * (dyc[i] * xc[i] - inner);
            let (st, sf) = (cache.st[i], cache.sf[i]);
            da += ds[i] * st * sf;
            dst[i] += ds[i] * a * sf;
            dsf[i] += ds[i] * a * st;
        }
        dchan[ch] = da;
    }

    let mut dstack = vec![F::zero(); 2 * plane];
    g.time_b[0] = stack_conv_backward(
        &cache.stack,
        t,
        f,
        p.time_w,
        &dst,
        k,
        true,
        &mut g.time_w,
        &mut dstack,
    );
    g.freq_b[0] = stack_conv_backward(
        &cache.stack,
        t,
        f,
        p.freq_w,
        &dsf,
        k,
        false,
        &mut g.freq_w,
        &mut dstack,
    );
    let inv_c = F::of(1.0 / c as f64);
    for i in 0..plane {
        let dm = dstack[i] * inv_c;
        for ch in 0..c {
            dx.data[ch * plane + i] += dm;
        }
        dx.data[cache.argmax[i] as usize * plane + i] += dstack[plane + i];
    }

    // channel branch
    let mut dhidden = vec![F::zero(); p.hidden];
    for ch in 0..c {
        let a = cache.chan[ch];
        let dz = dchan[ch] * (F::one() - a * a);
        g.fc2_b[ch] += dz;
        for h in 0..p.hidden {
            let hv = cache.hidden_pre[h].max(F::zero());
            g.fc2_w[ch * p.hidden + h] += dz * hv;
            dhidden[h] += dz * p.fc2_w[ch * p.hidden + h];
        }
    }
    let mut dgap = vec![F::zero(); c];
    for h in 0..p.hidden {
        if cache.hidden_pre[h] <= F::zero() {
            continue;
        }
        let dh = dhidden[h];
        g.fc1_b[h] += dh;
        for ch in 0..c {
            g.fc1_w[h * c + ch] += dh * cache.gap[ch];
            dgap[ch] += dh * p.fc1_w[h * c + ch];
        }
    }
    let inv_p = F::of(1.0 / plane as f64);
    for ch in 0..c {
        let d = dgap[ch] * inv_p;
        dx.channel_mut(ch).iter_mut().for_each(|v| *v += d);
    }
    (dx, g)
}

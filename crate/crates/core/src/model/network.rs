use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent f64 methods when std is linked
use num_traits::Float;
use rand::Rng;

use super::attention::{stc_attention, stc_attention_backward, AttentionCache, AttentionParams};
use super::layers::*;
use super::params::{fingerprint_of, Param, ParamSet};
use super::{ArchConfig, InputShape, Mode};
use crate::error::{bail, Error, Result};
use crate::features::FeatureTensor;
use crate::rng::rng_for;
use crate::Real;

const PER_BLOCK: usize = 8;
const TW: usize = 0;
const TB: usize = 1;
const SW: usize = 2;
const SB: usize = 3;
const JW: usize = 4;
const JB: usize = 5;
const GS: usize = 6;
const GO: usize = 7;

/// The classifier `p(y|x)` for a fixed architecture, input shape and class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: ArchConfig,
    input: InputShape,
    num_classes: usize,
    specs: Vec<(String, Vec<usize>)>,
    fingerprint: u64,
}

struct BlockCache<F> {
    input: Map<F>,
    cat: Map<F>,
    xhat: Map<F>,
    inv_std: Vec<F>,
    relu: Map<F>,
    drop_scale: Vec<F>,
    pool_arg: Option<Vec<u32>>,
}

/// Intermediates of one forward pass. Consumed by [`Network::backward`].
pub struct Cache<F> {
    blocks: Vec<BlockCache<F>>,
    attention: AttentionCache<F>,
    pooled: Vec<F>,
}

/// Per-sample caches of a batched forward pass.
pub struct BatchCache<F> {
    items: Vec<Cache<F>>,
}

impl<F> BatchCache<F> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

impl Network {
    pub fn new(arch: ArchConfig, input: InputShape, num_classes: usize) -> Result<Self> {
        arch.validate()?;
        if num_classes < 2 {
            bail!(Config, "need at least two classes, got {num_classes}");
        }
        let pools = arch.channels.len() - 1;
        if input.frames >> pools == 0 || input.mel_bins >> pools == 0 {
            bail!(
                Config,
                "{}x{} input is too small for {} pooling stages",
                input.frames,
                input.mel_bins,
                pools
            );
        }
        let specs = param_specs(&arch, num_classes);
        let fingerprint = fingerprint_of(
            specs.iter().map(|(n, s)| (n.as_str(), s.as_slice())),
            num_classes,
        );
        Ok(Self {
            arch,
            input,
            num_classes,
            specs,
            fingerprint,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn input(&self) -> InputShape {
        self.input
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// `(name, shape)` of every parameter array, in storage order.
    pub fn param_specs(&self) -> &[(String, Vec<usize>)] {
        &self.specs
    }

    pub fn num_params(&self) -> usize {
        self.specs
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    pub fn zeros<F: Real>(&self) -> ParamSet<F> {
        let params = self
            .specs
            .iter()
            .map(|(name, shape)| Param {
                name: name.clone(),
                shape: shape.clone(),
                data: vec![F::zero(); shape.iter().product()],
            })
            .collect();
        ParamSet::new(params, self.num_classes).expect("specs are consistent")
    }

    /// Seeded initialisation: He-uniform convolutions, unit norm scales,
    /// attention score convolutions near the constant 1.
    pub fn init<F: Real>(&self, seed: u64) -> ParamSet<F> {
        let mut rng = rng_for(seed, &[0x1417]);
        let mut set = self.zeros::<F>();
        let c_last = *self.arch.channels.last().unwrap();
        let hidden = self.arch.attention_hidden(c_last);
        for p in set.params_mut() {
            let name = p.name.as_str();
            let bound = if name.ends_with("norm.scale") {
                p.data.iter_mut().for_each(|v| *v = F::one());
                continue;
            } else if name == "attention.temporal.bias" || name == "attention.spectral.bias" {
                p.data.iter_mut().for_each(|v| *v = F::one());
                continue;
            } else if !p.is_weight() {
                continue;
            } else if name.starts_with("attention.temporal")
                || name.starts_with("attention.spectral")
            {
                0.1 * (6.0 / p.data.len() as f64).sqrt()
            } else if name == "attention.channel_fc2.weight" {
                (6.0 / (hidden + c_last) as f64).sqrt()
            } else if name == "head.weight" {
                (6.0 / (c_last + self.num_classes) as f64).sqrt()
            } else {
                let fan_in: usize = p.shape[1..].iter().product();
                (6.0 / fan_in as f64).sqrt()
            };
            for v in &mut p.data {
                *v = F::of(rng.gen_range(-bound..bound));
            }
        }
        set
    }

    fn check<F: Real>(&self, params: &ParamSet<F>, x: &FeatureTensor) -> Result<()> {
        if params.fingerprint() != self.fingerprint {
            return Err(Error::Fingerprint {
                expected: self.fingerprint,
                found: params.fingerprint(),
            });
        }
        if x.frames != self.input.frames || x.mel_bins != self.input.mel_bins {
            bail!(
                Shape,
                "input is {}x{}, network expects {}x{}",
                x.frames,
                x.mel_bins,
                self.input.frames,
                self.input.mel_bins
            );
        }
        Ok(())
    }

    fn attention_params<'a, F: Real>(&self, params: &'a ParamSet<F>) -> AttentionParams<'a, F> {
        let base = PER_BLOCK * self.arch.channels.len();
        AttentionParams {
            fc1_w: params.data(base),
            fc1_b: params.data(base + 1),
            fc2_w: params.data(base + 2),
            fc2_b: params.data(base + 3),
            time_w: params.data(base + 4),
            time_b: params.data(base + 5),
            freq_w: params.data(base + 6),
            freq_b: params.data(base + 7),
            hidden: self
                .arch
                .attention_hidden(*self.arch.channels.last().unwrap()),
            kernel: self.arch.attention_kernel,
        }
    }

    fn head_index(&self) -> usize {
        PER_BLOCK * (self.arch.channels.len() + 1)
    }

    /// Logits for one segment together with the cache for [`Network::backward`].
    pub fn forward<F: Real>(
        &self,
        params: &ParamSet<F>,
        x: &FeatureTensor,
        mode: Mode,
    ) -> Result<(Vec<F>, Cache<F>)> {
        self.check(params, x)?;
        let arch = &self.arch;
        let n_blocks = arch.channels.len();
        let mut h = Map {
            c: 1,
            t: x.frames,
            f: x.mel_bins,
            data: x.values.iter().map(|&v| F::of(v as f64)).collect(),
        };
        let mut blocks = Vec::with_capacity(n_blocks);
        for (b, &ch) in arch.channels.iter().enumerate() {
            let base = b * PER_BLOCK;
            let a = conv1d(
                &h,
                params.data(base + TW),
                params.data(base + TB),
                ch,
                arch.temporal_kernel,
                Axis::Time,
            );
            let s = conv1d(
                &h,
                params.data(base + SW),
                params.data(base + SB),
                ch,
                arch.spectral_kernel,
                Axis::Freq,
            );
            let mut cat = a;
            cat.c += s.c;
            cat.data.extend_from_slice(&s.data);
            drop(s);
            let j = pointwise(&cat, params.data(base + JW), params.data(base + JB), ch);
            let gn = group_norm(
                &j,
                params.data(base + GS),
                params.data(base + GO),
                arch.groups,
            );
            let mut relu = gn.y;
            relu.data.iter_mut().for_each(|v| *v = v.max(F::zero()));
            let drop_scale = self.dropout_scales::<F>(ch, b, mode);
            let mut out = relu.clone();
            for (c, &sc) in drop_scale.iter().enumerate() {
                if sc != F::one() {
                    out.channel_mut(c).iter_mut().for_each(|v| *v *= sc);
                }
            }
            let pool_arg = if b + 1 < n_blocks {
                let (pooled, arg) = max_pool2(&out);
                out = pooled;
                Some(arg)
            } else {
                None
            };
            blocks.push(BlockCache {
                input: h,
                cat,
                xhat: gn.xhat,
                inv_std: gn.inv_std,
                relu,
                drop_scale,
                pool_arg,
            });
            h = out;
        }

        let (y, attention) = stc_attention(&h, &self.attention_params(params));
        let pooled: Vec<F> = (0..y.c)
            .map(|c| y.channel(c).iter().copied().sum::<F>())
            .collect();
        let hw = params.data(self.head_index());
        let hb = params.data(self.head_index() + 1);
        let logits = (0..self.num_classes)
            .map(|k| {
                hb[k]
                    + pooled
                        .iter()
                        .enumerate()
                        .map(|(c, &z)| hw[k * y.c + c] * z)
                        .sum::<F>()
            })
            .collect();
        Ok((
            logits,
            Cache {
                blocks,
                attention,
                pooled,
            },
        ))
    }

    fn dropout_scales<F: Real>(&self, channels: usize, block: usize, mode: Mode) -> Vec<F> {
        let p = self.arch.dropout;
        match mode {
            Mode::Train { seed } if p > 0.0 => {
                let mut rng = rng_for(seed, &[0xd209, block as u64]);
                let keep = F::of(1.0 / (1.0 - p));
                (0..channels)
                    .map(|_| {
                        if rng.gen::<f64>() < p {
                            F::zero()
                        } else {
                            keep
                        }
                    })
                    .collect()
            }
            _ => vec![F::one(); channels],
        }
    }

    /// Logits only.
    pub fn predict<F: Real>(
        &self,
        params: &ParamSet<F>,
        x: &FeatureTensor,
        mode: Mode,
    ) -> Result<Vec<F>> {
        self.forward(params, x, mode).map(|(z, _)| z)
    }

    /// Accumulates `d(loss)/d(params)` for one cached forward pass into
    /// `grads`, given `dlogits = d(loss)/d(logits)`. No regularisation term.
    pub fn accumulate_gradient<F: Real>(
        &self,
        params: &ParamSet<F>,
        cache: Cache<F>,
        dlogits: &[F],
        grads: &mut ParamSet<F>,
    ) -> Result<()> {
        if dlogits.len() != self.num_classes {
            bail!(
                Shape,
                "upstream gradient has {} entries for {} classes",
                dlogits.len(),
                self.num_classes
            );
        }
        params.check_compatible(grads)?;
        let arch = &self.arch;
        let Cache {
            mut blocks,
            attention,
            pooled,
        } = cache;

        // head
        let hi = self.head_index();
        let c_last = pooled.len();
        let hw = params.data(hi);
        let mut dz = vec![F::zero(); c_last];
        {
            let [gw, gb] = grads.params_mut().get_disjoint_mut([hi, hi + 1]).unwrap();
            for k in 0..self.num_classes {
                let d = dlogits[k];
                gb.data[k] += d;
                for c in 0..c_last {
                    gw.data[k * c_last + c] += d * pooled[c];
                    dz[c] += hw[k * c_last + c] * d;
                }
            }
        }
        let last_shape = {
            let b = blocks.last().unwrap();
            (b.relu.c, b.relu.t, b.relu.f)
        };
        let mut dy = Map::zeros(last_shape.0, last_shape.1, last_shape.2);
        for c in 0..c_last {
            dy.channel_mut(c).fill(dz[c]);
        }

        // attention
        let ap = self.attention_params(params);
        let (mut dh, ag) = stc_attention_backward(&ap, &attention, &dy);
        drop(attention);
        let base = PER_BLOCK * arch.channels.len();
        for (off, g) in [
            &ag.fc1_w, &ag.fc1_b, &ag.fc2_w, &ag.fc2_b, &ag.time_w, &ag.time_b, &ag.freq_w,
            &ag.freq_b,
        ]
        .into_iter()
        .enumerate()
        {
            axpy(grads.data_mut(base + off), F::one(), g);
        }

        // blocks, last to first
        for b in (0..arch.channels.len()).rev() {
            let bc = blocks.pop().unwrap();
            let ch = arch.channels[b];
            let pbase = b * PER_BLOCK;
            let mut d = match &bc.pool_arg {
                Some(arg) => max_pool2_backward(&dh, arg, bc.relu.c, bc.relu.t, bc.relu.f),
                None => dh,
            };
            for c in 0..ch {
                let sc = bc.drop_scale[c];
                for (g, &r) in d.channel_mut(c).iter_mut().zip(bc.relu.channel(c)) {
                    *g = if r > F::zero() { *g * sc } else { F::zero() };
                }
            }
            let [gs, go] = grads
                .params_mut()
                .get_disjoint_mut([pbase + GS, pbase + GO])
                .unwrap();
            let dj = group_norm_backward(
                &d,
                &bc.xhat,
                &bc.inv_std,
                params.data(pbase + GS),
                &mut gs.data,
                &mut go.data,
            );
            let [jw, jb] = grads
                .params_mut()
                .get_disjoint_mut([pbase + JW, pbase + JB])
                .unwrap();
            let dcat = pointwise_backward(
                &bc.cat,
                params.data(pbase + JW),
                &dj,
                &mut jw.data,
                &mut jb.data,
            );
            let half = ch * dcat.plane();
            let da = Map {
                c: ch,
                t: dcat.t,
                f: dcat.f,
                data: dcat.data[..half].to_vec(),
            };
            let ds = Map {
                c: ch,
                t: dcat.t,
                f: dcat.f,
                data: dcat.data[half..].to_vec(),
            };
            let mut dx = (b > 0).then(|| Map::zeros(bc.input.c, bc.input.t, bc.input.f));
            let [tw, tb, sw, sb] = grads
                .params_mut()
                .get_disjoint_mut([pbase + TW, pbase + TB, pbase + SW, pbase + SB])
                .unwrap();
            conv1d_backward(
                &bc.input,
                params.data(pbase + TW),
                &da,
                arch.temporal_kernel,
                Axis::Time,
                &mut tw.data,
                &mut tb.data,
                dx.as_mut(),
            );
            conv1d_backward(
                &bc.input,
                params.data(pbase + SW),
                &ds,
                arch.spectral_kernel,
                Axis::Freq,
                &mut sw.data,
                &mut sb.data,
                dx.as_mut(),
            );
            match dx {
                Some(dx) => dh = dx,
                None => break,
            }
        }
        Ok(())
    }

    /// Adds the L2 term `l2 * w` for every conv/dense kernel.
    pub fn add_l2<F: Real>(&self, params: &ParamSet<F>, grads: &mut ParamSet<F>) {
        let l2 = F::of(self.arch.l2);
        for (g, p) in grads.params_mut().iter_mut().zip(params.params()) {
            if p.is_weight() {
                axpy(&mut g.data, l2, &p.data);
            }
        }
    }

    /// Full gradient (data term plus L2) of one cached forward pass.
    pub fn backward<F: Real>(
        &self,
        params: &ParamSet<F>,
        cache: Cache<F>,
        dlogits: &[F],
    ) -> Result<ParamSet<F>> {
        let mut grads = params.zeros_like();
        self.accumulate_gradient(params, cache, dlogits, &mut grads)?;
        self.add_l2(params, &mut grads);
        Ok(grads)
    }

    /// Forward over a batch. In train mode sample `i` draws its dropout masks
    /// from `(seed, i)`.
    pub fn forward_batch<F: Real>(
        &self,
        params: &ParamSet<F>,
        batch: &[FeatureTensor],
        mode: Mode,
    ) -> Result<(Vec<Vec<F>>, BatchCache<F>)> {
        let mut logits = Vec::with_capacity(batch.len());
        let mut items = Vec::with_capacity(batch.len());
        for (i, x) in batch.iter().enumerate() {
            let (z, c) = self.forward(params, x, mode.for_item(i as u64))?;
            logits.push(z);
            items.push(c);
        }
        Ok((logits, BatchCache { items }))
    }

    /// Sum of per-sample data gradients plus one L2 term.
    pub fn backward_batch<F: Real>(
        &self,
        params: &ParamSet<F>,
        cache: BatchCache<F>,
        upstream: &[Vec<F>],
    ) -> Result<ParamSet<F>> {
        if upstream.len() != cache.items.len() {
            bail!(
                Shape,
                "{} upstream gradients for a batch of {}",
                upstream.len(),
                cache.items.len()
            );
        }
        let mut grads = params.zeros_like();
        for (c, d) in cache.items.into_iter().zip(upstream) {
            self.accumulate_gradient(params, c, d, &mut grads)?;
        }
        self.add_l2(params, &mut grads);
        Ok(grads)
    }
}

fn param_specs(arch: &ArchConfig, num_classes: usize) -> Vec<(String, Vec<usize>)> {
    let mut specs = Vec::new();
    let mut cin = 1;
    for (b, &c) in arch.channels.iter().enumerate() {
        specs.push((
            format!("block{b}.temporal.weight"),
            vec![c, cin, arch.temporal_kernel],
        ));
        specs.push((format!("block{b}.temporal.bias"), vec![c]));
        specs.push((
            format!("block{b}.spectral.weight"),
            vec![c, cin, arch.spectral_kernel],
        ));
        specs.push((format!("block{b}.spectral.bias"), vec![c]));
        specs.push((format!("block{b}.joint.weight"), vec![c, 2 * c]));
        specs.push((format!("block{b}.joint.bias"), vec![c]));
        specs.push((format!("block{b}.norm.scale"), vec![c]));
        specs.push((format!("block{b}.norm.offset"), vec![c]));
        cin = c;
    }
    let hidden = arch.attention_hidden(cin);
    let k = arch.attention_kernel;
    specs.push(("attention.channel_fc1.weight".into(), vec![hidden, cin]));
    specs.push(("attention.channel_fc1.bias".into(), vec![hidden]));
    specs.push(("attention.channel_fc2.weight".into(), vec![cin, hidden]));
    specs.push(("attention.channel_fc2.bias".into(), vec![cin]));
    specs.push(("attention.temporal.weight".into(), vec![2, k]));
    specs.push(("attention.temporal.bias".into(), vec![1]));
    specs.push(("attention.spectral.weight".into(), vec![2, k]));
    specs.push(("attention.spectral.bias".into(), vec![1]));
    specs.push(("head.weight".into(), vec![num_classes, cin]));
    specs.push(("head.bias".into(), vec![num_classes]));
    specs
}

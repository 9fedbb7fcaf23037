//! Coordinator: participant sampling, sample-weighted averaging and the
//! round loop.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent f64 methods when std is linked
use num_traits::Float;
use rand::seq::index::sample;

use crate::data::{Dataset, PartitionPlan};
use crate::error::{bail, Error, Result};
use crate::metrics::evaluate;
use crate::model::{Network, ParamSet};
use crate::rng::{derive_seed, rng_for};
use crate::selftrain::{
    confidence_threshold, device_update, DeviceStats, LocalData, SelfTrainConfig,
};
use crate::Real;

const PARTICIPANT_TAG: u64 = 0x9a47;
const DEVICE_TAG: u64 = 0xde71;
const INIT_TAG: u64 = 0x1417;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FederationConfig {
    pub num_devices: usize,
    pub rounds: u32,
    pub participation: f64,
    pub local_epochs: u32,
    pub seed: u64,
    /// Evaluate the global model every this many rounds (0: final round only).
    pub eval_every: u32,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            num_devices: 10,
            rounds: 100,
            participation: 0.8,
            local_epochs: 1,
            seed: 0,
            eval_every: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_devices == 0 {
            bail!(Config, "need at least one device");
        }
        if self.rounds == 0 {
            bail!(Config, "need at least one round");
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            bail!(Config, "participation must be in (0, 1]");
        }
        if self.local_epochs == 0 {
            bail!(Config, "local epochs must be >= 1");
        }
        Ok(())
    }

    /// `ceil(q K)`, at least one.
    pub fn participants_per_round(&self) -> usize {
        let m = (self.participation * self.num_devices as f64 - 1e-9).ceil() as usize;
        m.clamp(1, self.num_devices)
    }
}

/// Sorted device ids taking part in `round`; a pure function of the seed
/// and round index.
pub fn sample_participants(cfg: &FederationConfig, round: u32) -> Vec<usize> {
    let m = cfg.participants_per_round();
    if m == cfg.num_devices {
        return (0..m).collect();
    }
    let mut rng = rng_for(cfg.seed, &[PARTICIPANT_TAG, round as u64]);
    let mut ids = sample(&mut rng, cfg.num_devices, m).into_vec();
    ids.sort_unstable();
    ids
}

/// Sample-count weighted average of `(device id, params, N_k)` updates.
/// Weights are normalised over the given updates and summed in ascending
/// device order in double precision.
pub fn aggregate<F: Real>(updates: &[(usize, &ParamSet<F>, usize)]) -> Result<ParamSet<F>> {
    let Some(first) = updates.first() else {
        return Err(Error::Empty("update list"));
    };
    for u in updates {
        first.1.check_compatible(u.1)?;
    }
    let total: usize = updates.iter().map(|u| u.2).sum();
    if total == 0 {
        bail!(InvalidInput, "aggregating updates with zero total samples");
    }
    let mut order: Vec<&(usize, &ParamSet<F>, usize)> = updates.iter().collect();
    order.sort_by_key(|u| u.0);
    let mut acc: Vec<Vec<f64>> = first
        .1
        .params()
        .iter()
        .map(|p| vec![0.0; p.data.len()])
        .collect();
    for (_, params, n) in order {
        let gamma = *n as f64 / total as f64;
        for (a, p) in acc.iter_mut().zip(params.params()) {
            for (x, v) in a.iter_mut().zip(&p.data) {
                *x += gamma * v.f64();
            }
        }
    }
    let mut out = first.1.clone();
    for (p, a) in out.params_mut().iter_mut().zip(acc) {
        for (d, v) in p.data.iter_mut().zip(a) {
            *d = F::of(v);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundRecord {
    pub round: u32,
    pub participants: Vec<usize>,
    pub samples: Vec<usize>,
    pub weights: Vec<f64>,
    pub devices: Vec<DeviceStats>,
    /// Utterance-level UA of the aggregated model, when evaluated.
    pub ua: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationState<F> {
    pub global: ParamSet<F>,
    /// Completed rounds.
    pub completed: u32,
    /// Completed rounds per device.
    pub device_completed: Vec<u32>,
    pub log: Vec<RoundRecord>,
}

impl<F: Real> FederationState<F> {
    pub fn new(global: ParamSet<F>, num_devices: usize) -> Self {
        Self {
            global,
            completed: 0,
            device_completed: vec![0; num_devices],
            log: Vec::new(),
        }
    }
}

/// Runs the per-round device updates. Implementations may run jobs in
/// parallel but must return results in input order.
pub trait Executor {
    fn map<T, R, G>(&self, items: Vec<T>, f: G) -> Vec<R>
    where
        T: Send,
        R: Send,
        G: Fn(T) -> R + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, R, G>(&self, items: Vec<T>, f: G) -> Vec<R>
    where
        T: Send,
        R: Send,
        G: Fn(T) -> R + Sync + Send,
    {
        items.into_iter().map(f).collect()
    }
}

/// Seed of device `k`'s local update in `round`.
pub fn device_seed(cfg: &FederationConfig, round: u32, k: usize) -> u64 {
    derive_seed(cfg.seed, &[DEVICE_TAG, round as u64, k as u64])
}

/// Seed of the initial global model.
pub fn init_seed(cfg: &FederationConfig) -> u64 {
    derive_seed(cfg.seed, &[INIT_TAG])
}

/// Plays one round on `state`. The state is untouched if any device fails.
pub fn run_round<'s, F: Real, E: Executor>(
    net: &Network,
    state: &'s mut FederationState<F>,
    ds: &Dataset,
    plan: &PartitionPlan,
    cfg: &FederationConfig,
    st: &SelfTrainConfig,
    exec: &E,
) -> Result<&'s RoundRecord> {
    let round = state.completed;
    if round >= cfg.rounds {
        bail!(InvalidInput, "all {} rounds already completed", cfg.rounds);
    }
    let participants = sample_participants(cfg, round);
    let mut jobs = Vec::with_capacity(participants.len());
    for &k in &participants {
        let tau = confidence_threshold(cfg.rounds, state.completed, state.device_completed[k], st)?;
        jobs.push((k, tau));
    }
    let global = &state.global;
    let results = exec.map(jobs, |(k, tau)| {
        let shard = &plan.devices[k];
        let data = LocalData {
            labeled: ds.labeled_segments(&shard.labeled),
            unlabeled: ds.segments(&shard.unlabeled),
        };
        let seed = device_seed(cfg, round, k);
        device_update(net, global, &data, tau, st, cfg.local_epochs, seed).map_err(|e| {
            Error::Device {
                device: k,
                source: alloc::boxed::Box::new(e),
            }
        })
    });
    let mut updates = Vec::with_capacity(results.len());
    for r in results {
        updates.push(r?);
    }
    let samples: Vec<usize> = participants
        .iter()
        .map(|&k| plan.devices[k].len())
        .collect();
    let view: Vec<(usize, &ParamSet<F>, usize)> = participants
        .iter()
        .zip(&updates)
        .zip(&samples)
        .map(|((&k, (p, _)), &n)| (k, p, n))
        .collect();
    let next = aggregate(&view)?;
    next.check_finite()?;
    let total: usize = samples.iter().sum();
    let weights = samples.iter().map(|&n| n as f64 / total as f64).collect();

    state.completed += 1;
    let last = state.completed == cfg.rounds;
    let ua = if last || (cfg.eval_every > 0 && state.completed.is_multiple_of(cfg.eval_every)) {
        if plan.test.is_empty() {
            None
        } else {
            Some(evaluate(net, &next, ds, &plan.test)?.ua)
        }
    } else {
        None
    };
    state.global = next;
    for &k in &participants {
        state.device_completed[k] += 1;
    }
    state.log.push(RoundRecord {
        round,
        participants,
        samples,
        weights,
        devices: updates.into_iter().map(|(_, s)| s).collect(),
        ua,
    });
    Ok(state.log.last().expect("just pushed"))
}

/// Full federated self-training run from a seeded initial model. `observe`
/// sees every round's record and the new global parameters.
pub fn run_federation<F: Real, E: Executor>(
    net: &Network,
    ds: &Dataset,
    plan: &PartitionPlan,
    cfg: &FederationConfig,
    st: &SelfTrainConfig,
    exec: &E,
    mut observe: impl FnMut(&RoundRecord, &ParamSet<F>) -> Result<()>,
) -> Result<FederationState<F>> {
    cfg.validate()?;
    st.validate()?;
    if plan.num_devices() != cfg.num_devices {
        bail!(
            InvalidInput,
            "plan has {} devices, config {}",
            plan.num_devices(),
            cfg.num_devices
        );
    }
    if net.num_classes() != ds.num_classes() {
        bail!(
            InvalidInput,
            "model has {} classes, dataset {}",
            net.num_classes(),
            ds.num_classes()
        );
    }
    let mut state = FederationState::new(net.init(init_seed(cfg)), cfg.num_devices);
    while state.completed < cfg.rounds {
        run_round(net, &mut state, ds, plan, cfg, st, exec)?;
        observe(state.log.last().expect("round recorded"), &state.global)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn participant_counts() {
        let cfg = FederationConfig {
            num_devices: 10,
            participation: 0.8,
            ..Default::default()
        };
        assert_eq!(cfg.participants_per_round(), 8);
        for r in 0..20 {
            let p = sample_participants(&cfg, r);
            assert_eq!(p.len(), 8);
            assert!(p.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(p, sample_participants(&cfg, r));
        }
        let full = FederationConfig {
            num_devices: 7,
            participation: 1.0,
            ..Default::default()
        };
        assert_eq!(sample_participants(&full, 3), (0..7).collect::<Vec<_>>());
        let tiny = FederationConfig {
            num_devices: 3,
            participation: 0.01,
            ..Default::default()
        };
        assert_eq!(tiny.participants_per_round(), 1);
        assert!(FederationConfig {
            rounds: 100,
            participation: 0.8,
            local_epochs: 1,
            num_devices: 10,
            ..Default::default()
        }
        .validate()
        .is_ok());
        assert!(FederationConfig {
            participation: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}

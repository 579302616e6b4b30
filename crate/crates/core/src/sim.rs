//! Slot-synchronous Monte Carlo simulation on a collision channel.
//!
//! Every slot each device, in index order, draws its harvest and then its
//! decision variate from the replication's stream. A slot succeeds iff exactly
//! one device transmits; every transmitter pays the transmission cost.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeviceState, SystemParams};
use crate::policy::{probability_cut, CompiledPolicy, PolicyConfig};

pub const DEFAULT_SLOTS: u64 = 1_000_000;
pub const DEFAULT_WARMUP: u64 = 10_000;
pub const DEFAULT_REPLICATIONS: u32 = 10;

/// 97.5% standard normal quantile.
const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: SystemParams,
    pub policy: PolicyConfig,
    /// Measured slots per replication.
    pub num_slots: u64,
    /// Slots run before measurement starts.
    pub warmup_slots: u64,
    pub num_replications: u32,
    pub seed: u64,
    /// Also record the battery-level occupancy histogram (slower).
    #[serde(default)]
    pub record_occupancy: bool,
}

impl SimConfig {
    pub fn new(params: SystemParams, policy: PolicyConfig) -> Self {
        Self {
            params,
            policy,
            num_slots: DEFAULT_SLOTS,
            warmup_slots: DEFAULT_WARMUP,
            num_replications: DEFAULT_REPLICATIONS,
            seed: 0,
            record_occupancy: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.policy.validate(&self.params)?;
        if self.num_slots == 0 {
            return Err(Error::param("num_slots", "must be at least 1"));
        }
        if self.num_replications == 0 {
            return Err(Error::param("num_replications", "must be at least 1"));
        }
        Ok(())
    }
}

/// The deterministic stream owned by replication `replication` of a run seeded with `seed`.
///
/// Streams are 2^128 draws apart, so replications never overlap.
pub fn replication_rng(seed: u64, replication: u32) -> Xoshiro256PlusPlus {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for _ in 0..replication {
        rng.jump();
    }
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelEvent {
    Idle,
    Success { device: usize },
    Collision { transmitters: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotOutcome {
    pub event: ChannelEvent,
    /// Devices whose packet reached the age limit this slot.
    pub discards: u32,
}

const TWO_POW_NEG_32: f64 = 1.0 / 4_294_967_296.0;

/// Two uniforms on [0, 1) with 2^-32 resolution from one 64-bit draw: the low
/// half drives the harvest, the high half the transmit decision.
#[inline]
pub fn split_uniforms(x: u64) -> (f64, f64) {
    (
        f64::from(x as u32) * TWO_POW_NEG_32,
        f64::from((x >> 32) as u32) * TWO_POW_NEG_32,
    )
}

/// All devices of one replication plus per-slot scratch space.
#[derive(Debug, Clone)]
pub struct Network {
    params: SystemParams,
    policy: CompiledPolicy,
    harvest_cut: u64,
    states: Vec<DeviceState>,
    harvested: Vec<bool>,
    transmitting: Vec<bool>,
}

impl Network {
    pub fn new(params: SystemParams, policy: &PolicyConfig) -> Self {
        let d = params.num_devices as usize;
        Self {
            policy: CompiledPolicy::new(policy, &params),
            harvest_cut: probability_cut(params.harvest_prob),
            states: vec![DeviceState::initial(&params); d],
            harvested: vec![false; d],
            transmitting: vec![false; d],
            params,
        }
    }

    pub fn states(&self) -> &[DeviceState] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [DeviceState] {
        &mut self.states
    }

    /// Which devices transmitted in the most recent slot.
    pub fn last_transmitters(&self) -> &[bool] {
        &self.transmitting
    }

    /// Advance one slot.
    pub fn step<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> SlotOutcome {
        self.advance(rng, None)
    }

    /// Advance one slot, adding the slot-start states to `tally`.
    pub fn step_observed<R: RngCore + ?Sized>(&mut self, rng: &mut R, tally: &mut Tally) -> SlotOutcome {
        self.advance(rng, Some(tally))
    }

    fn advance<R: RngCore + ?Sized>(&mut self, rng: &mut R, mut tally: Option<&mut Tally>) -> SlotOutcome {
        // integer form of the two uniforms from `split_uniforms`
        let harvest_cut = self.harvest_cut;
        let mut count = 0u32;
        let mut last = 0usize;
        for (i, s) in self.states.iter().enumerate() {
            let x = rng.next_u64();
            let tx = self.policy.decide_bits(*s, (x >> 32) as u32);
            self.harvested[i] = u64::from(x as u32) < harvest_cut;
            self.transmitting[i] = tx;
            count += u32::from(tx);
            last = if tx { i } else { last };
        }
        let event = match count {
            0 => ChannelEvent::Idle,
            1 => ChannelEvent::Success { device: last },
            n => ChannelEvent::Collision { transmitters: n },
        };
        let winner = if count == 1 { last } else { usize::MAX };
        let (cap, cost, max_aoi) = (
            self.params.battery_capacity,
            self.params.tx_cost,
            self.params.aoi_max,
        );
        if let Some(t) = tally.as_deref_mut() {
            t.record(&self.states);
        }
        let mut discards = 0;
        // branch-free form of `update_energy` / `update_aoi`; the compiled
        // policy never lets a device transmit with less than `tx_cost`
        for (i, s) in self.states.iter_mut().enumerate() {
            let tx = self.transmitting[i];
            let energy = (s.energy + u32::from(self.harvested[i])).min(cap) - cost * u32::from(tx);
            let dropped = i != winner && s.aoi == max_aoi;
            let aoi = if i == winner || dropped { 1 } else { s.aoi + 1 };
            discards += u32::from(dropped);
            *s = DeviceState { energy, aoi };
        }
        if let Some(t) = tally {
            match event {
                ChannelEvent::Idle => t.counts.idle += 1,
                ChannelEvent::Success { .. } => t.counts.successes += 1,
                ChannelEvent::Collision { .. } => t.counts.collisions += 1,
            }
            t.counts.discards += u64::from(discards);
            t.slots += 1;
        }
        SlotOutcome { event, discards }
    }
}

/// Running sums over measured slots.
#[derive(Debug, Clone)]
pub struct Tally {
    aoi_sum: Vec<u64>,
    energy_sum: u64,
    min_energy: u32,
    histogram: Option<Vec<u64>>,
    counts: EventCounts,
    slots: u64,
}

impl Tally {
    pub fn new(params: &SystemParams, record_occupancy: bool) -> Self {
        Self {
            aoi_sum: vec![0; params.num_devices as usize],
            energy_sum: 0,
            min_energy: u32::MAX,
            histogram: record_occupancy.then(|| vec![0; params.battery_capacity as usize + 1]),
            counts: EventCounts::default(),
            slots: 0,
        }
    }

    fn record(&mut self, states: &[DeviceState]) {
        let mut energy = 0u64;
        let mut min = self.min_energy;
        for (sum, s) in self.aoi_sum.iter_mut().zip(states) {
            *sum += u64::from(s.aoi);
            energy += u64::from(s.energy);
            min = min.min(s.energy);
        }
        self.energy_sum += energy;
        self.min_energy = min;
        if let Some(h) = self.histogram.as_mut() {
            for s in states {
                h[s.energy as usize] += 1;
            }
        }
    }

    /// Fold in the states left after the last measured slot, which belong to the
    /// trace but not to any slot average.
    fn close(&mut self, states: &[DeviceState]) {
        for s in states {
            self.min_energy = self.min_energy.min(s.energy);
        }
    }

    fn finish(self) -> ReplicationStats {
        let slots = self.slots as f64;
        let d = self.aoi_sum.len() as f64;
        let per_device_aaoi: Vec<f64> = self.aoi_sum.iter().map(|&s| s as f64 / slots).collect();
        let aaoi = per_device_aaoi.iter().sum::<f64>() / d;
        let mut counts = self.counts;
        counts.packets_generated = counts.successes + counts.discards;
        ReplicationStats {
            aaoi,
            per_device_aaoi,
            counts,
            mean_energy: self.energy_sum as f64 / (slots * d),
            min_energy: self.min_energy,
            energy_histogram: self.histogram,
        }
    }
}

/// Event totals over the measured slots.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub successes: u64,
    pub collisions: u64,
    pub idle: u64,
    pub discards: u64,
    /// Packet epochs that ended in the window, by delivery or by discard.
    pub packets_generated: u64,
}

impl EventCounts {
    fn add(&mut self, o: &EventCounts) {
        self.successes += o.successes;
        self.collisions += o.collisions;
        self.idle += o.idle;
        self.discards += o.discards;
        self.packets_generated += o.packets_generated;
    }
}

/// Measurements from one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationStats {
    pub aaoi: f64,
    pub per_device_aaoi: Vec<f64>,
    pub counts: EventCounts,
    pub mean_energy: f64,
    pub min_energy: u32,
    /// Device-slots spent at each battery level `0..=B`, when recorded.
    pub energy_histogram: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub aaoi: f64,
    pub avp: f64,
    /// False when no packet epoch ended in the window; `avp` is then 0.
    pub avp_defined: bool,
    pub per_device_aaoi: Vec<f64>,
    pub counts: EventCounts,
    pub mean_energy_empirical: f64,
    pub min_energy_observed: u32,
    pub ci_halfwidth_aaoi: f64,
    /// Fraction of device-slots spent at each battery level `0..=B`, when recorded.
    pub energy_occupancy: Option<Vec<f64>>,
    pub replication_aaoi: Vec<f64>,
    pub num_slots: u64,
    pub warmup_slots: u64,
    pub num_replications: u32,
    pub seed: u64,
}

/// Fraction of packet epochs that ended by discard; `None` when none ended.
pub fn compute_avp(discards: u64, packets: u64) -> Option<f64> {
    (packets > 0).then(|| discards as f64 / packets as f64)
}

/// Run a single replication.
pub fn run_replication(cfg: &SimConfig, replication: u32) -> ReplicationStats {
    let mut rng = replication_rng(cfg.seed, replication);
    let mut net = Network::new(cfg.params, &cfg.policy);
    for _ in 0..cfg.warmup_slots {
        net.step(&mut rng);
    }
    let mut tally = Tally::new(&cfg.params, cfg.record_occupancy);
    for _ in 0..cfg.num_slots {
        net.step_observed(&mut rng, &mut tally);
    }
    tally.close(net.states());
    tally.finish()
}

/// Run every replication of `cfg` (in parallel on the current rayon pool) and
/// merge them in replication order.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let reps: Vec<ReplicationStats> = (0..cfg.num_replications)
        .into_par_iter()
        .map(|r| run_replication(cfg, r))
        .collect();
    Ok(merge(cfg, &reps))
}

fn merge(cfg: &SimConfig, reps: &[ReplicationStats]) -> SimResult {
    let n = reps.len() as f64;
    let d = cfg.params.num_devices as usize;
    let replication_aaoi: Vec<f64> = reps.iter().map(|r| r.aaoi).collect();
    let aaoi = replication_aaoi.iter().sum::<f64>() / n;
    let ci_halfwidth_aaoi = if reps.len() > 1 {
        let var = replication_aaoi
            .iter()
            .map(|a| (a - aaoi).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        Z_975 * (var / n).sqrt()
    } else {
        0.0
    };

    let mut counts = EventCounts::default();
    let mut per_device_aaoi = vec![0.0; d];
    let mut histogram = cfg
        .record_occupancy
        .then(|| vec![0u64; cfg.params.battery_capacity as usize + 1]);
    for r in reps {
        counts.add(&r.counts);
        for (acc, v) in per_device_aaoi.iter_mut().zip(&r.per_device_aaoi) {
            *acc += v / n;
        }
        if let (Some(acc), Some(h)) = (histogram.as_mut(), r.energy_histogram.as_ref()) {
            for (a, v) in acc.iter_mut().zip(h) {
                *a += v;
            }
        }
    }
    let avp = compute_avp(counts.discards, counts.packets_generated);
    SimResult {
        aaoi,
        avp: avp.unwrap_or(0.0),
        avp_defined: avp.is_some(),
        per_device_aaoi,
        counts,
        mean_energy_empirical: reps.iter().map(|r| r.mean_energy).sum::<f64>() / n,
        min_energy_observed: reps.iter().map(|r| r.min_energy).min().unwrap_or(0),
        ci_halfwidth_aaoi,
        energy_occupancy: histogram.map(|h| {
            let total: u64 = h.iter().sum();
            h.iter().map(|&c| c as f64 / total as f64).collect()
        }),
        replication_aaoi,
        num_slots: cfg.num_slots,
        warmup_slots: cfg.warmup_slots,
        num_replications: cfg.num_replications,
        seed: cfg.seed,
    }
}

//! Per-slot transmit/hold decisions for every access policy.
//!
//! [`decide`] is the reference rule. [`CompiledPolicy`] tabulates the same
//! rule per battery level so the simulator's inner loop is two comparisons.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{normalized_aoi, normalized_energy, DeviceState, SystemParams};

/// Transmission probability as a function of the battery level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProbFunction {
    Constant { k: f64 },
    /// Constant `1/sqrt(D)`, resolved against the network size at evaluation time.
    InvSqrtD,
    Linear { c: f64 },
    Elliptical { c: f64 },
}

impl ProbFunction {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ProbFunction::Constant { k } if !(0.0..=1.0).contains(&k) => {
                Err(Error::param("k", format!("must lie in [0, 1], got {k}")))
            }
            ProbFunction::Linear { c } | ProbFunction::Elliptical { c } if !(c > 0.0) => {
                Err(Error::param("c", format!("must be positive, got {c}")))
            }
            _ => Ok(()),
        }
    }
}

/// Ways the age-threshold baseline may gate on the battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdraEnergyGate {
    /// Only physical feasibility: the battery must hold one transmission.
    #[default]
    TxCost,
    /// Same reserve rule as the proposed policy.
    TxCostPlusFloor,
}

/// Access policy and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyConfig {
    /// Transmit whenever the reserve survives the transmission.
    #[serde(rename = "none")]
    NoPolicy,
    /// Weighted energy/age threshold with p = 1.
    ThresholdOnly { alpha: f64, tau: f64 },
    /// Weighted energy/age threshold followed by a random draw against `prob`.
    Proposed {
        alpha: f64,
        tau: f64,
        prob: ProbFunction,
    },
    /// Age-dependent random access: transmit w.p. `p` once the age reaches
    /// `age_threshold`, regardless of battery reserve.
    Adra {
        age_threshold: u32,
        p: f64,
        #[serde(default)]
        energy_gate: AdraEnergyGate,
    },
}

impl PolicyConfig {
    pub fn validate(&self, params: &SystemParams) -> Result<()> {
        let unit = |field: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::param(field, format!("must lie in [0, 1], got {v}")))
            }
        };
        match *self {
            PolicyConfig::NoPolicy => Ok(()),
            PolicyConfig::ThresholdOnly { alpha, tau } => {
                unit("alpha", alpha)?;
                unit("tau", tau)
            }
            PolicyConfig::Proposed { alpha, tau, prob } => {
                unit("alpha", alpha)?;
                unit("tau", tau)?;
                prob.validate()
            }
            PolicyConfig::Adra {
                age_threshold, p, ..
            } => {
                if age_threshold == 0 || age_threshold > params.aoi_max {
                    return Err(Error::param(
                        "age_threshold",
                        format!("must lie in [1, {}], got {age_threshold}", params.aoi_max),
                    ));
                }
                unit("p", p)
            }
        }
    }

    /// Short label used in result tables.
    pub fn label(&self) -> String {
        match self {
            PolicyConfig::NoPolicy => "none".into(),
            PolicyConfig::ThresholdOnly { .. } => "threshold_only".into(),
            PolicyConfig::Proposed { prob, .. } => match prob {
                ProbFunction::Constant { .. } => "proposed_constant".into(),
                ProbFunction::InvSqrtD => "proposed_inv_sqrt_d".into(),
                ProbFunction::Linear { .. } => "proposed_linear".into(),
                ProbFunction::Elliptical { .. } => "proposed_elliptical".into(),
            },
            PolicyConfig::Adra { .. } => "adra".into(),
        }
    }

    /// True for the policies that keep the reserve after every transmission.
    pub fn respects_energy_floor(&self) -> bool {
        match self {
            PolicyConfig::Adra { energy_gate, .. } => {
                *energy_gate == AdraEnergyGate::TxCostPlusFloor
            }
            _ => true,
        }
    }
}

#[inline]
pub fn energy_eligible(state: DeviceState, params: &SystemParams) -> bool {
    state.energy >= params.eligible_energy()
}

#[inline]
pub fn threshold_met(state: DeviceState, alpha: f64, tau: f64, params: &SystemParams) -> bool {
    weighted_score(state, alpha, params) >= tau
}

#[inline]
fn weighted_score(state: DeviceState, alpha: f64, params: &SystemParams) -> f64 {
    (1.0 - alpha) * normalized_energy(state.energy, params) + alpha * normalized_aoi(state.aoi, params)
}

/// Transmission probability at `energy`, clamped to [0, 1].
///
/// Linear and elliptical grow from zero at `E + E_min`; the elliptical ratio
/// is clamped to 1 before the square root so the curve saturates instead of
/// going complex above `B - E`.
pub fn eval_prob(f: ProbFunction, energy: u32, params: &SystemParams) -> f64 {
    let span = f64::from(params.battery_capacity - params.energy_floor - params.tx_cost);
    let raw = match f {
        ProbFunction::Constant { k } => k,
        ProbFunction::InvSqrtD => 1.0 / f64::from(params.num_devices).sqrt(),
        ProbFunction::Linear { c } => {
            c * (f64::from(energy) - f64::from(params.eligible_energy())) / span
        }
        ProbFunction::Elliptical { c } => {
            let x = ((f64::from(energy) - f64::from(params.energy_floor)) / span).clamp(0.0, 1.0);
            c * (1.0 - (1.0 - x * x).sqrt())
        }
    };
    raw.clamp(0.0, 1.0)
}

/// Decide whether a device transmits this slot given a fresh uniform draw `u` in [0, 1).
pub fn decide(policy: &PolicyConfig, state: DeviceState, params: &SystemParams, u: f64) -> bool {
    match *policy {
        PolicyConfig::NoPolicy => energy_eligible(state, params),
        PolicyConfig::ThresholdOnly { alpha, tau } => {
            energy_eligible(state, params) && threshold_met(state, alpha, tau, params)
        }
        PolicyConfig::Proposed { alpha, tau, prob } => {
            energy_eligible(state, params)
                && threshold_met(state, alpha, tau, params)
                && u < eval_prob(prob, state.energy, params)
        }
        PolicyConfig::Adra {
            age_threshold,
            p,
            energy_gate,
        } => {
            let needed = match energy_gate {
                AdraEnergyGate::TxCost => params.tx_cost,
                AdraEnergyGate::TxCostPlusFloor => params.eligible_energy(),
            };
            state.aoi >= age_threshold && state.energy >= needed && u < p
        }
    }
}

/// A policy tabulated per battery level: a device with energy `e` and age `a`
/// transmits iff `a >= min_aoi[e]` and `u < prob[e]`.
#[derive(Debug, Clone)]
pub struct CompiledPolicy {
    min_aoi: Vec<u32>,
    prob: Vec<f64>,
    /// `ceil(prob * 2^32)`: a 32-bit draw `x` passes iff `x < cut`.
    cut: Vec<u64>,
}

/// Integer cut equivalent to `x * 2^-32 < p` for every 32-bit `x`.
#[inline]
pub fn probability_cut(p: f64) -> u64 {
    (p.clamp(0.0, 1.0) * 4_294_967_296.0).ceil() as u64
}

impl CompiledPolicy {
    pub fn new(policy: &PolicyConfig, params: &SystemParams) -> Self {
        let levels = params.battery_capacity as usize + 1;
        let mut min_aoi = vec![u32::MAX; levels];
        let mut prob = vec![0.0; levels];
        for energy in 0..=params.battery_capacity {
            let idx = energy as usize;
            // every gate is monotone in age, so the first passing age is the cut
            let gate = |aoi: u32| gates_pass(policy, DeviceState { energy, aoi }, params);
            if let Some(a) = (1..=params.aoi_max).find(|&a| gate(a)) {
                min_aoi[idx] = a;
            }
            prob[idx] = match *policy {
                PolicyConfig::NoPolicy | PolicyConfig::ThresholdOnly { .. } => 1.0,
                PolicyConfig::Proposed { prob, .. } => eval_prob(prob, energy, params),
                PolicyConfig::Adra { p, .. } => p,
            };
        }
        let cut = prob.iter().map(|&p| probability_cut(p)).collect();
        Self { min_aoi, prob, cut }
    }

    #[inline(always)]
    pub fn decide(&self, state: DeviceState, u: f64) -> bool {
        let e = state.energy as usize;
        (state.aoi >= self.min_aoi[e]) & (u < self.prob[e])
    }

    /// Same decision with the uniform given as a raw 32-bit draw, `u = bits * 2^-32`.
    #[inline(always)]
    pub fn decide_bits(&self, state: DeviceState, bits: u32) -> bool {
        let e = state.energy as usize;
        (state.aoi >= self.min_aoi[e]) & (u64::from(bits) < self.cut[e])
    }

    /// Transmission probability at `energy` once the gates pass.
    pub fn prob_at(&self, energy: u32) -> f64 {
        self.prob[energy as usize]
    }

    /// Smallest age passing the gates at `energy`, `None` if no age does.
    pub fn min_aoi_at(&self, energy: u32) -> Option<u32> {
        let a = self.min_aoi[energy as usize];
        (a != u32::MAX).then_some(a)
    }
}

/// The deterministic part of [`decide`]: everything except the random draw.
fn gates_pass(policy: &PolicyConfig, state: DeviceState, params: &SystemParams) -> bool {
    match *policy {
        PolicyConfig::NoPolicy => energy_eligible(state, params),
        PolicyConfig::ThresholdOnly { alpha, tau } | PolicyConfig::Proposed { alpha, tau, .. } => {
            energy_eligible(state, params) && threshold_met(state, alpha, tau, params)
        }
        PolicyConfig::Adra {
            age_threshold,
            energy_gate,
            ..
        } => {
            let needed = match energy_gate {
                AdraEnergyGate::TxCost => params.tx_cost,
                AdraEnergyGate::TxCostPlusFloor => params.eligible_energy(),
            };
            state.aoi >= age_threshold && state.energy >= needed
        }
    }
}

//! Energy-level and age Markov chains, their stationary distributions, and
//! the analytical average age built from them.
//!
//! The energy chain runs over battery levels `E_min..=B`. Below `E_min + E`
//! a device can only harvest; from there up it transmits with probability
//! `p(m)` and moves down by `E` (or `E - 1` when it also harvests). At `B`
//! harvest is lost to the cap.
//!
//! The age chain runs over `1..=aoi_max`. Below the threshold `T` the age
//! increments deterministically; from `T` on, a slot resets it to 1 with
//! probability `q * p'` where `p'` is the per-slot transmit probability and
//! `q = (1 - p')^(D-1)` the chance nobody else transmits. `aoi_max` always
//! resets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemParams;
use crate::policy::{eval_prob, PolicyConfig, ProbFunction};

/// Row sums must match 1 this closely.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Largest accepted `max |pi M - pi|` for a stationary solution.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainKind {
    Energy,
    Aoi,
}

/// Row-stochastic matrix over consecutive integer states starting at `first_state`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    kind: ChainKind,
    first_state: u32,
    data: DMatrix<f64>,
}

impl TransitionMatrix {
    pub fn new(kind: ChainKind, first_state: u32, data: DMatrix<f64>) -> Result<Self> {
        if !data.is_square() || data.nrows() == 0 {
            return Err(Error::NotStochastic(format!(
                "expected a non-empty square matrix, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        for (i, row) in data.row_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::NotStochastic(format!("row {i} has entry {v}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::NotStochastic(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self {
            kind,
            first_state,
            data,
        })
    }

    pub fn kind(&self) -> ChainKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    /// Label (energy level or age) of row `index`.
    pub fn state(&self, index: usize) -> u32 {
        self.first_state + index as u32
    }

    pub fn first_state(&self) -> u32 {
        self.first_state
    }

    /// Probability of moving from state `from` to state `to` (labels, not indices).
    pub fn prob(&self, from: u32, to: u32) -> f64 {
        let (i, j) = (from - self.first_state, to - self.first_state);
        self.data[(i as usize, j as usize)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// `max_j |(pi M)_j - pi_j|`.
    pub fn residual(&self, pi: &[f64]) -> f64 {
        let v = DVector::from_column_slice(pi);
        let next = self.data.tr_mul(&v);
        (next - v).amax()
    }

    /// Nonzero entries per row, for cheap repeated multiplication.
    fn sparse_rows(&self) -> Vec<Vec<(usize, f64)>> {
        self.data
            .row_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect()
    }
}

/// Build the battery-level chain with transmit probability `p(m)` in state `m`.
///
/// `p` is only consulted for levels that can afford a transmission, i.e. `m >= E_min + E`.
pub fn build_energy_chain(params: &SystemParams, p: impl Fn(u32) -> f64) -> Result<TransitionMatrix> {
    params.validate()?;
    let (lo, cap, cost) = (params.energy_floor, params.battery_capacity, params.tx_cost);
    let eta = params.harvest_prob;
    let n = (cap - lo + 1) as usize;
    let idx = |level: u32| (level - lo) as usize;
    let mut m = DMatrix::zeros(n, n);
    for level in lo..=cap {
        let i = idx(level);
        if level < params.eligible_energy() {
            m[(i, i)] += 1.0 - eta;
            m[(i, idx(level + 1))] += eta;
            continue;
        }
        let tx = p(level);
        if !(0.0..=1.0).contains(&tx) {
            return Err(Error::param(
                "p",
                format!("transmit probability {tx} at level {level} is outside [0, 1]"),
            ));
        }
        if level == cap {
            m[(i, i)] += 1.0 - tx;
            m[(i, idx(level - cost))] += tx;
        } else {
            m[(i, i)] += (1.0 - eta) * (1.0 - tx);
            m[(i, idx(level + 1))] += eta * (1.0 - tx);
            m[(i, idx(level - cost))] += (1.0 - eta) * tx;
            m[(i, idx(level - cost + 1))] += eta * tx;
        }
    }
    TransitionMatrix::new(ChainKind::Energy, lo, m)
}

/// Build the age chain for per-slot transmit probability `p_prime`, `D`
/// devices and age threshold `t`. `t = aoi_max + 1` means the threshold is
/// never met.
pub fn build_aoi_chain(
    p_prime: f64,
    num_devices: u32,
    t: u32,
    params: &SystemParams,
) -> Result<TransitionMatrix> {
    if !(0.0..=1.0).contains(&p_prime) {
        return Err(Error::param("p_prime", format!("must lie in [0, 1], got {p_prime}")));
    }
    if num_devices == 0 {
        return Err(Error::param("num_devices", "must be at least 1"));
    }
    let amax = params.aoi_max;
    if t == 0 || t > amax + 1 {
        return Err(Error::param("t", format!("must lie in [1, {}], got {t}", amax + 1)));
    }
    let reset = success_probability(p_prime, num_devices);
    let n = amax as usize;
    let mut m = DMatrix::zeros(n, n);
    for age in 1..=amax {
        let i = (age - 1) as usize;
        if age == amax {
            m[(i, 0)] += 1.0;
        } else if age < t {
            m[(i, i + 1)] = 1.0;
        } else {
            m[(i, 0)] += reset;
            m[(i, i + 1)] += 1.0 - reset;
        }
    }
    TransitionMatrix::new(ChainKind::Aoi, 1, m)
}

/// `p' * (1 - p')^(D-1)`: this device transmits and nobody else does.
pub fn success_probability(p_prime: f64, num_devices: u32) -> f64 {
    p_prime * no_other_transmits(p_prime, num_devices)
}

/// `(1 - p')^(D-1)`.
pub fn no_other_transmits(p_prime: f64, num_devices: u32) -> f64 {
    (1.0 - p_prime).powi(num_devices as i32 - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    Direct,
    PowerIteration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDist {
    pub kind: ChainKind,
    /// Label of `probs[0]`.
    pub first_state: u32,
    pub probs: Vec<f64>,
    pub method: SolverMethod,
    pub iterations: usize,
    pub residual: f64,
}

impl StationaryDist {
    pub fn state(&self, index: usize) -> u32 {
        self.first_state + index as u32
    }

    /// Probability of the state labelled `label` (0 outside the support).
    pub fn at(&self, label: u32) -> f64 {
        label
            .checked_sub(self.first_state)
            .and_then(|i| self.probs.get(i as usize))
            .copied()
            .unwrap_or(0.0)
    }

    /// `sum_i label_i * pi_i`.
    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| f64::from(self.state(i)) * p)
            .sum()
    }

    pub fn total_variation(&self, other: &[f64]) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Closed communicating classes, as sorted state indices. A chain with more
/// than one has no unique stationary distribution.
pub fn recurrent_classes(m: &TransitionMatrix) -> Vec<Vec<usize>> {
    let rows = m.sparse_rows();
    let n = rows.len();
    let reach: Vec<Vec<bool>> = (0..n)
        .map(|start| {
            let mut seen = vec![false; n];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                for &(j, _) in &rows[i] {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen
        })
        .collect();
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        let recurrent = (0..n).all(|j| !reach[i][j] || reach[j][i]);
        if recurrent && !classes.iter().any(|c| c.contains(&i)) {
            classes.push((0..n).filter(|&j| reach[i][j]).collect());
        }
    }
    classes
}

/// Stationary distribution by a direct linear solve of `(M^T - I) pi = 0`
/// with one equation replaced by `sum(pi) = 1`, falling back to power
/// iteration if the solve is singular or inaccurate.
pub fn solve_stationary(m: &TransitionMatrix) -> Result<StationaryDist> {
    let classes = recurrent_classes(m);
    if classes.len() > 1 {
        return Err(Error::Reducible { classes });
    }
    let n = m.len();
    let mut a = m.matrix().transpose() - DMatrix::identity(n, n);
    a.row_mut(n - 1).fill(1.0);
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    if let Some(x) = a.lu().solve(&b) {
        let probs = normalize(x.iter().copied());
        let residual = m.residual(&probs);
        if residual < RESIDUAL_TOL && probs.iter().all(|p| p.is_finite()) {
            return Ok(StationaryDist {
                kind: m.kind(),
                first_state: m.first_state(),
                probs,
                method: SolverMethod::Direct,
                iterations: 0,
                residual,
            });
        }
    }
    power_iteration(m, None, 1e-14, 10_000_000)
}

/// Iterate `pi <- pi (M + I) / 2` from `start` (uniform if `None`) until the
/// largest change per step is below `tol`. The lazy chain shares `M`'s
/// stationary vectors and is aperiodic, so periodic chains converge too.
/// On a reducible chain the limit depends on `start`.
pub fn power_iteration(
    m: &TransitionMatrix,
    start: Option<&[f64]>,
    tol: f64,
    max_iterations: usize,
) -> Result<StationaryDist> {
    let rows = m.sparse_rows();
    let n = rows.len();
    let mut pi = match start {
        Some(s) if s.len() == n => normalize(s.iter().copied()),
        Some(s) => {
            return Err(Error::param(
                "start",
                format!("expected {n} entries, got {}", s.len()),
            ))
        }
        None => vec![1.0 / n as f64; n],
    };
    let mut next = vec![0.0; n];
    let mut trace = Vec::new();
    for it in 1..=max_iterations {
        next.iter_mut().zip(&pi).for_each(|(x, p)| *x = 0.5 * p);
        for (i, row) in rows.iter().enumerate() {
            let w = 0.5 * pi[i];
            for &(j, v) in row {
                next[j] += w * v;
            }
        }
        let change = next
            .iter()
            .zip(&pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut pi, &mut next);
        if it % 1000 == 0 {
            trace.push(change);
        }
        if change < tol {
            let probs = normalize(pi.iter().copied());
            let residual = m.residual(&probs);
            return Ok(StationaryDist {
                kind: m.kind(),
                first_state: m.first_state(),
                probs,
                method: SolverMethod::PowerIteration,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iterations,
        residual: m.residual(&pi),
        trace,
    })
}

fn normalize(values: impl Iterator<Item = f64>) -> Vec<f64> {
    // round-off can leave entries a hair below zero
    let v: Vec<f64> = values.map(|x| x.max(0.0)).collect();
    let total: f64 = v.iter().sum();
    v.into_iter().map(|x| x / total).collect()
}

/// Stationary probability that a device can afford a transmission (`energy >= E_min + E`).
pub fn prob_eligible(energy_dist: &StationaryDist, params: &SystemParams) -> f64 {
    energy_dist
        .probs
        .iter()
        .enumerate()
        .filter(|&(i, _)| energy_dist.state(i) >= params.eligible_energy())
        .map(|(_, p)| p)
        .sum()
}

/// Average battery level under the stationary distribution.
pub fn mean_energy(energy_dist: &StationaryDist) -> f64 {
    energy_dist.mean()
}

/// Average age under the stationary distribution.
pub fn analytical_aaoi(aoi_dist: &StationaryDist) -> f64 {
    aoi_dist.mean()
}

/// Age from which the weighted threshold holds at a given battery level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FictionalThreshold {
    Age(u32),
    /// No age satisfies it (only possible with `alpha = 0`).
    Never,
}

impl FictionalThreshold {
    /// Threshold as passed to [`build_aoi_chain`], `aoi_max + 1` standing for never.
    pub fn chain_threshold(self, params: &SystemParams) -> u32 {
        match self {
            FictionalThreshold::Age(t) => t,
            FictionalThreshold::Never => params.aoi_max + 1,
        }
    }
}

/// How the fictional threshold is computed from the mean battery level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdForm {
    /// Normalized mean energy, scaled by `aoi_max`: the smallest age meeting
    /// the weighted threshold at the mean battery level.
    #[default]
    Normalized,
    /// `ceil((tau - (1 - alpha) * mean_energy) / alpha)` with the raw mean
    /// energy, clamped to `[1, aoi_max]`.
    RawEnergy,
}

pub fn fictional_threshold(
    alpha: f64,
    tau: f64,
    mean_energy: f64,
    params: &SystemParams,
    form: ThresholdForm,
) -> FictionalThreshold {
    let amax = params.aoi_max;
    let energy_term = match form {
        ThresholdForm::Normalized => {
            (1.0 - alpha) * (mean_energy - f64::from(params.energy_floor))
                / f64::from(params.battery_capacity - params.energy_floor)
        }
        ThresholdForm::RawEnergy => (1.0 - alpha) * mean_energy,
    };
    if alpha == 0.0 {
        return if energy_term >= tau {
            FictionalThreshold::Age(1)
        } else {
            FictionalThreshold::Never
        };
    }
    match form {
        ThresholdForm::RawEnergy => {
            let t = ((tau - energy_term) / alpha).ceil();
            FictionalThreshold::Age(t.clamp(1.0, f64::from(amax)) as u32)
        }
        ThresholdForm::Normalized => {
            let holds = |age: u32| energy_term + alpha * f64::from(age) / f64::from(amax) >= tau;
            let raw = (f64::from(amax) * (tau - energy_term) / alpha).ceil();
            let mut t = raw.clamp(1.0, f64::from(amax)) as u32;
            // settle round-off so t is exactly the first age that passes
            while t > 1 && holds(t - 1) {
                t -= 1;
            }
            while t < amax && !holds(t) {
                t += 1;
            }
            FictionalThreshold::Age(t)
        }
    }
}

/// Stationary age distribution straight from the balance recursion:
/// `delta_i = delta_{i-1} * P(i-1 -> i)`, normalized, where the step
/// probability is 1 below `t` and `1 - q p'` from `t` on.
pub fn aoi_recursion(reset_prob: f64, t: u32, params: &SystemParams) -> Vec<f64> {
    let mut delta = Vec::with_capacity(params.aoi_max as usize);
    delta.push(1.0);
    for prev in 1..params.aoi_max {
        let step = if prev < t { 1.0 } else { 1.0 - reset_prob };
        delta.push(delta[(prev - 1) as usize] * step);
    }
    let total: f64 = delta.iter().sum();
    delta.into_iter().map(|d| d / total).collect()
}

/// How a battery-dependent transmit probability enters the energy chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyChainMode {
    /// Row `m` uses `p(m)` directly.
    #[default]
    StateDependent,
    /// Every row uses one constant `p`, iterated (with damping) to the fixed
    /// point `p = E[p(m) | eligible]` under the chain it induces.
    EffectiveConstant,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CoupledOptions {
    #[serde(default)]
    pub threshold_form: ThresholdForm,
    #[serde(default)]
    pub energy_mode: EnergyChainMode,
}

/// Both chains solved together, with the scalars that link them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledSolution {
    pub energy_dist: StationaryDist,
    pub aoi_dist: StationaryDist,
    /// Stationary probability of having enough energy to transmit.
    pub p_e: f64,
    pub mean_energy: f64,
    /// Per-slot transmit probability `p'`.
    pub effective_p: f64,
    /// `(1 - p')^(D-1)`.
    pub q: f64,
    pub fictional_t: FictionalThreshold,
    pub analytical_aaoi: f64,
    pub iterations: usize,
    pub p_prime_trace: Vec<f64>,
}

const COUPLING_TOL: f64 = 1e-10;
const COUPLING_MAX_ITER: usize = 10_000;

/// Transmit probability per battery level and threshold weights for the policies
/// the chains can describe.
fn chain_inputs(policy: &PolicyConfig) -> Result<(f64, f64, ProbFunction)> {
    match *policy {
        PolicyConfig::NoPolicy => Ok((0.0, 0.0, ProbFunction::Constant { k: 1.0 })),
        PolicyConfig::ThresholdOnly { alpha, tau } => {
            Ok((alpha, tau, ProbFunction::Constant { k: 1.0 }))
        }
        PolicyConfig::Proposed { alpha, tau, prob } => Ok((alpha, tau, prob)),
        PolicyConfig::Adra { .. } => Err(Error::param(
            "policy",
            "the chain model describes the reserve-keeping policies only",
        )),
    }
}

/// Solve the energy chain, derive `P_E`, mean energy, `p'`, `q` and the
/// fictional threshold, then solve the age chain.
pub fn solve_coupled(
    params: &SystemParams,
    policy: &PolicyConfig,
    opts: CoupledOptions,
) -> Result<CoupledSolution> {
    params.validate()?;
    policy.validate(params)?;
    let (alpha, tau, prob) = chain_inputs(policy)?;
    let p_of = |m: u32| eval_prob(prob, m, params);
    let constant = matches!(prob, ProbFunction::Constant { .. } | ProbFunction::InvSqrtD);

    let (energy_dist, effective_p, iterations, trace) = if constant
        || opts.energy_mode == EnergyChainMode::StateDependent
    {
        let dist = solve_stationary(&build_energy_chain(params, p_of)?)?;
        let p_prime = transmit_mass(&dist, params, p_of);
        (dist, p_prime, 1, vec![p_prime])
    } else {
        let mut p = p_of(params.battery_capacity);
        let mut trace = Vec::new();
        let mut last = f64::NAN;
        let mut solved = None;
        for it in 1..=COUPLING_MAX_ITER {
            let dist = solve_stationary(&build_energy_chain(params, |_| p)?)?;
            let p_e = prob_eligible(&dist, params);
            let p_prime = p * p_e;
            trace.push(p_prime);
            if (p_prime - last).abs() < COUPLING_TOL {
                solved = Some((dist, p_prime, it));
                break;
            }
            last = p_prime;
            let target = if p_e > 0.0 {
                transmit_mass(&dist, params, p_of) / p_e
            } else {
                0.0
            };
            // the undamped map can two-cycle between draining and filling the battery
            p = 0.5 * (p + target);
        }
        let (dist, p_prime, it) = solved.ok_or_else(|| {
            let n = trace.len();
            Error::NoConvergence {
                iterations: COUPLING_MAX_ITER,
                residual: (trace[n - 1] - trace[n - 2]).abs(),
                trace: trace[n.saturating_sub(50)..].to_vec(),
            }
        })?;
        (dist, p_prime, it, trace)
    };

    let p_e = prob_eligible(&energy_dist, params);
    let mean = mean_energy(&energy_dist);
    let fictional_t = fictional_threshold(alpha, tau, mean, params, opts.threshold_form);
    let q = no_other_transmits(effective_p, params.num_devices);
    let aoi_chain = build_aoi_chain(
        effective_p,
        params.num_devices,
        fictional_t.chain_threshold(params),
        params,
    )?;
    let aoi_dist = solve_stationary(&aoi_chain)?;
    Ok(CoupledSolution {
        analytical_aaoi: analytical_aaoi(&aoi_dist),
        energy_dist,
        aoi_dist,
        p_e,
        mean_energy: mean,
        effective_p,
        q,
        fictional_t,
        iterations,
        p_prime_trace: trace,
    })
}

/// `sum_m p(m) * pi_m` over levels that can afford a transmission.
fn transmit_mass(dist: &StationaryDist, params: &SystemParams, p: impl Fn(u32) -> f64) -> f64 {
    dist.probs
        .iter()
        .enumerate()
        .map(|(i, w)| (dist.state(i), w))
        .filter(|&(level, _)| level >= params.eligible_energy())
        .map(|(level, w)| p(level) * w)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> SystemParams {
        SystemParams {
            num_devices: 1,
            battery_capacity: 2,
            tx_cost: 1,
            energy_floor: 0,
            harvest_prob: 0.5,
            aoi_max: 3,
        }
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn three_state_energy_chain() {
        let m = build_energy_chain(&toy(), |_| 0.5).unwrap();
        let expect = [[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.0, 0.5, 0.5]];
        for (i, row) in expect.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!((m.matrix()[(i, j)] - v).abs() < 1e-15, "({i},{j})");
            }
        }
        let pi = solve_stationary(&m).unwrap();
        assert!(close(&pi.probs, &[0.25, 0.5, 0.25], 1e-12));
        assert_eq!(pi.method, SolverMethod::Direct);
        assert!((prob_eligible(&pi, &toy()) - 0.75).abs() < 1e-12);
        assert!((mean_energy(&pi) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn silent_chain_fills_the_battery() {
        let p = SystemParams::default();
        let m = build_energy_chain(&p, |_| 0.0).unwrap();
        for level in p.energy_floor..p.battery_capacity {
            assert!((m.prob(level, level + 1) - p.harvest_prob).abs() < 1e-15);
        }
        assert_eq!(m.prob(100, 100), 1.0);
        let pi = solve_stationary(&m).unwrap();
        assert!((pi.at(100) - 1.0).abs() < 1e-12);
        assert!((prob_eligible(&pi, &p) - 1.0).abs() < 1e-12);
        assert!((mean_energy(&pi) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn no_harvest_freezes_low_levels() {
        let p = SystemParams {
            harvest_prob: 0.0,
            ..SystemParams::default()
        };
        let m = build_energy_chain(&p, |_| 0.3).unwrap();
        for level in 1..11 {
            assert_eq!(m.prob(level, level), 1.0);
        }
        for level in 1..100 {
            assert_eq!(m.prob(level, level + 1), 0.0);
        }
        let err = solve_stationary(&m).unwrap_err();
        match err {
            Error::Reducible { classes } => assert_eq!(classes.len(), 10),
            other => panic!("unexpected {other:?}"),
        }
        // started at the floor, nothing ever becomes eligible
        let mut start = vec![0.0; 100];
        start[0] = 1.0;
        let pi = power_iteration(&m, Some(&start), 1e-14, 1000).unwrap();
        assert_eq!(prob_eligible(&pi, &p), 0.0);
    }

    #[test]
    fn rejects_bad_probabilities() {
        assert!(build_energy_chain(&SystemParams::default(), |_| 1.5).is_err());
        // levels that cannot transmit ignore p
        assert!(build_energy_chain(&SystemParams::default(), |m| if m < 11 { 7.0 } else { 0.2 }).is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.0, 1.0]);
        assert!(matches!(
            TransitionMatrix::new(ChainKind::Energy, 0, bad),
            Err(Error::NotStochastic(_))
        ));
    }

    #[test]
    fn single_state_chain() {
        let m = TransitionMatrix::new(ChainKind::Aoi, 1, DMatrix::identity(1, 1)).unwrap();
        assert_eq!(solve_stationary(&m).unwrap().probs, vec![1.0]);
    }

    #[test]
    fn aoi_chain_examples() {
        let p = toy();
        let cycle = build_aoi_chain(0.0, 1, 1, &p).unwrap();
        assert_eq!(cycle.prob(1, 2), 1.0);
        assert_eq!(cycle.prob(2, 3), 1.0);
        assert_eq!(cycle.prob(3, 1), 1.0);
        let pi = solve_stationary(&cycle).unwrap();
        assert!(close(&pi.probs, &[1.0 / 3.0; 3], 1e-12));

        let always = build_aoi_chain(1.0, 1, 1, &p).unwrap();
        let pi = solve_stationary(&always).unwrap();
        assert!(close(&pi.probs, &[1.0, 0.0, 0.0], 1e-12));
        assert_eq!(analytical_aaoi(&pi), 1.0);

        // p' q = 0.5 with D = 1
        let half = build_aoi_chain(0.5, 1, 1, &p).unwrap();
        let pi = solve_stationary(&half).unwrap();
        assert!(close(&pi.probs, &[4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0], 1e-12));
        assert!((analytical_aaoi(&pi) - 11.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn aoi_chain_input_checks() {
        let p = toy();
        assert!(build_aoi_chain(1.2, 1, 1, &p).is_err());
        assert!(build_aoi_chain(0.2, 0, 1, &p).is_err());
        assert!(build_aoi_chain(0.2, 2, 0, &p).is_err());
        assert!(build_aoi_chain(0.2, 2, 5, &p).is_err());
        // threshold never met: plain cycle
        let never = build_aoi_chain(0.9, 2, 4, &p).unwrap();
        assert_eq!(never.prob(1, 2), 1.0);
    }

    #[test]
    fn uniform_age_mean() {
        let p = SystemParams::default();
        let m = build_aoi_chain(0.0, 10, 1, &p).unwrap();
        let pi = solve_stationary(&m).unwrap();
        assert!((analytical_aaoi(&pi) - 100.5).abs() < 1e-9);
    }

    #[test]
    fn recursion_matches_chain_for_any_threshold() {
        let p = SystemParams::default();
        for (p_prime, d, t) in [(0.05, 10, 1), (0.02, 50, 37), (0.3, 5, 120), (0.1, 1, 200)] {
            let pi = solve_stationary(&build_aoi_chain(p_prime, d, t, &p).unwrap()).unwrap();
            let rec = aoi_recursion(success_probability(p_prime, d), t, &p);
            assert!(close(&pi.probs, &rec, 1e-10), "p'={p_prime} D={d} T={t}");
        }
    }

    #[test]
    fn fictional_threshold_examples() {
        // mean energy 7 on [1, 11] is 0.6 normalized
        let p = SystemParams {
            battery_capacity: 11,
            energy_floor: 1,
            tx_cost: 2,
            ..SystemParams::default()
        };
        let t = fictional_threshold(0.5, 0.6, 7.0, &p, ThresholdForm::Normalized);
        assert_eq!(t, FictionalThreshold::Age(120));
        let t = fictional_threshold(1.0, 0.5, 7.0, &p, ThresholdForm::Normalized);
        assert_eq!(t, FictionalThreshold::Age(100));
        let t = fictional_threshold(0.3, 0.0, 7.0, &p, ThresholdForm::Normalized);
        assert_eq!(t, FictionalThreshold::Age(1));
        assert_eq!(
            fictional_threshold(0.0, 0.7, 7.0, &p, ThresholdForm::Normalized),
            FictionalThreshold::Never
        );
        assert_eq!(
            fictional_threshold(0.0, 0.5, 7.0, &p, ThresholdForm::Normalized),
            FictionalThreshold::Age(1)
        );
        // the raw-energy form is dominated by the unnormalized mean
        assert_eq!(
            fictional_threshold(0.5, 0.6, 7.0, &p, ThresholdForm::RawEnergy),
            FictionalThreshold::Age(1)
        );
        assert_eq!(FictionalThreshold::Never.chain_threshold(&p), 201);
    }

    #[test]
    fn coupled_toy_composition() {
        let p = SystemParams {
            aoi_max: 3,
            ..toy()
        };
        let policy = PolicyConfig::Proposed {
            alpha: 0.5,
            tau: 0.0,
            prob: ProbFunction::Constant { k: 0.5 },
        };
        let sol = solve_coupled(&p, &policy, CoupledOptions::default()).unwrap();
        assert!((sol.effective_p - 0.375).abs() < 1e-12);
        assert_eq!(sol.q, 1.0);
        assert_eq!(sol.fictional_t, FictionalThreshold::Age(1));
        assert_eq!(sol.iterations, 1);
        assert!((sol.p_e - 0.75).abs() < 1e-12);
    }

    #[test]
    fn effective_constant_mode_converges() {
        let p = SystemParams::default();
        let policy = PolicyConfig::Proposed {
            alpha: 0.5,
            tau: 0.0,
            prob: ProbFunction::Linear { c: 2.0 },
        };
        let opts = CoupledOptions {
            energy_mode: EnergyChainMode::EffectiveConstant,
            ..Default::default()
        };
        let sol = solve_coupled(&p, &policy, opts).unwrap();
        assert!(sol.iterations > 1);
        let n = sol.p_prime_trace.len();
        assert!((sol.p_prime_trace[n - 1] - sol.p_prime_trace[n - 2]).abs() < 1e-10);
        let direct = solve_coupled(&p, &policy, CoupledOptions::default()).unwrap();
        assert_eq!(direct.iterations, 1);
        assert!(sol.effective_p > 0.0 && direct.effective_p > 0.0);
    }

    #[test]
    fn adra_has_no_chain_model() {
        let policy = PolicyConfig::Adra {
            age_threshold: 10,
            p: 0.1,
            energy_gate: Default::default(),
        };
        assert!(solve_coupled(&SystemParams::default(), &policy, CoupledOptions::default()).is_err());
    }
}

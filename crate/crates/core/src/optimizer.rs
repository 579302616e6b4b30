//! Exhaustive grid search over policy parameters.
//!
//! Every grid point is simulated with the same master seed (common random
//! numbers). Points are screened at a short budget, then the best few are
//! re-run at the full budget and the winner is picked among those.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemParams;
use crate::policy::{AdraEnergyGate, PolicyConfig, ProbFunction};
use crate::sim::{run_simulation, SimConfig, SimResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Aaoi,
    Avp,
}

impl Objective {
    pub fn of(self, r: &SimResult) -> f64 {
        match self {
            Objective::Aaoi => r.aaoi,
            Objective::Avp => r.avp,
        }
    }
}

/// Which policy the grid parameterizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyFamily {
    NoPolicy,
    ThresholdOnly,
    Constant,
    InvSqrtD,
    Linear,
    Elliptical,
    Adra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub num_slots: u64,
    pub warmup_slots: u64,
    pub num_replications: u32,
}

impl Budget {
    pub const SCREEN: Budget = Budget {
        num_slots: 50_000,
        warmup_slots: 10_000,
        num_replications: 1,
    };
    pub const FULL: Budget = Budget {
        num_slots: crate::sim::DEFAULT_SLOTS,
        warmup_slots: crate::sim::DEFAULT_WARMUP,
        num_replications: crate::sim::DEFAULT_REPLICATIONS,
    };
}

/// Candidate values per parameter; only the lists the family uses matter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub family: PolicyFamily,
    #[serde(default = "unit_grid")]
    pub alpha_grid: Vec<f64>,
    #[serde(default = "unit_grid")]
    pub tau_grid: Vec<f64>,
    #[serde(default = "default_c_grid")]
    pub c_grid: Vec<f64>,
    #[serde(default = "default_k_grid")]
    pub k_grid: Vec<f64>,
    #[serde(default = "default_adra_threshold_grid")]
    pub adra_threshold_grid: Vec<u32>,
    #[serde(default = "default_adra_p_grid")]
    pub adra_p_grid: Vec<f64>,
    #[serde(default)]
    pub adra_energy_gate: AdraEnergyGate,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default = "screen_budget")]
    pub screen: Budget,
    /// Budget for re-running the best screened points; `None` keeps the screen values.
    #[serde(default = "refine_budget")]
    pub refine: Option<Budget>,
    #[serde(default = "default_refine_top")]
    pub refine_top: usize,
    #[serde(default)]
    pub seed: u64,
}

fn steps(lo: f64, step: f64, n: usize) -> Vec<f64> {
    // rounded so grid values print cleanly and compare exactly across runs
    (0..n)
        .map(|i| ((lo + step * i as f64) * 1e6).round() / 1e6)
        .collect()
}

fn unit_grid() -> Vec<f64> {
    steps(0.0, 0.05, 21)
}
fn default_c_grid() -> Vec<f64> {
    steps(0.1, 0.1, 30)
}
fn default_k_grid() -> Vec<f64> {
    steps(0.05, 0.05, 20)
}
fn default_adra_threshold_grid() -> Vec<u32> {
    std::iter::once(1).chain((5..=200).step_by(5)).collect()
}
fn default_adra_p_grid() -> Vec<f64> {
    steps(0.01, 0.01, 100)
}
fn screen_budget() -> Budget {
    Budget::SCREEN
}
fn refine_budget() -> Option<Budget> {
    Some(Budget::FULL)
}
fn default_refine_top() -> usize {
    5
}

impl ParamGrid {
    /// Default grids for `family`.
    pub fn new(family: PolicyFamily) -> Self {
        Self {
            family,
            alpha_grid: unit_grid(),
            tau_grid: unit_grid(),
            c_grid: default_c_grid(),
            k_grid: default_k_grid(),
            adra_threshold_grid: default_adra_threshold_grid(),
            adra_p_grid: default_adra_p_grid(),
            adra_energy_gate: AdraEnergyGate::default(),
            objective: Objective::default(),
            screen: Budget::SCREEN,
            refine: Some(Budget::FULL),
            refine_top: 5,
            seed: 0,
        }
    }

    /// All candidate configurations in lexicographic grid order.
    pub fn points(&self) -> Vec<PolicyConfig> {
        let mut out = Vec::new();
        let weighted = |out: &mut Vec<PolicyConfig>, f: &dyn Fn(f64, f64) -> Vec<PolicyConfig>| {
            for &alpha in &self.alpha_grid {
                for &tau in &self.tau_grid {
                    out.extend(f(alpha, tau));
                }
            }
        };
        match self.family {
            PolicyFamily::NoPolicy => out.push(PolicyConfig::NoPolicy),
            PolicyFamily::ThresholdOnly => {
                weighted(&mut out, &|alpha, tau| vec![PolicyConfig::ThresholdOnly { alpha, tau }])
            }
            PolicyFamily::InvSqrtD => weighted(&mut out, &|alpha, tau| {
                vec![PolicyConfig::Proposed {
                    alpha,
                    tau,
                    prob: ProbFunction::InvSqrtD,
                }]
            }),
            PolicyFamily::Constant => weighted(&mut out, &|alpha, tau| {
                self.k_grid
                    .iter()
                    .map(|&k| PolicyConfig::Proposed {
                        alpha,
                        tau,
                        prob: ProbFunction::Constant { k },
                    })
                    .collect()
            }),
            PolicyFamily::Linear | PolicyFamily::Elliptical => weighted(&mut out, &|alpha, tau| {
                self.c_grid
                    .iter()
                    .map(|&c| PolicyConfig::Proposed {
                        alpha,
                        tau,
                        prob: if self.family == PolicyFamily::Linear {
                            ProbFunction::Linear { c }
                        } else {
                            ProbFunction::Elliptical { c }
                        },
                    })
                    .collect()
            }),
            PolicyFamily::Adra => {
                for &age_threshold in &self.adra_threshold_grid {
                    for &p in &self.adra_p_grid {
                        out.push(PolicyConfig::Adra {
                            age_threshold,
                            p,
                            energy_gate: self.adra_energy_gate,
                        });
                    }
                }
            }
        }
        out
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub config: PolicyConfig,
    /// Screening objective; `None` when the point was invalid.
    pub screen_objective: Option<f64>,
    pub screen_ci: Option<f64>,
    /// Objective at the refinement budget, for points that were refined.
    pub refined_objective: Option<f64>,
    pub refined_ci: Option<f64>,
    /// Lowest battery level seen in any run of this point.
    pub min_energy_observed: Option<u32>,
    pub error: Option<String>,
}

impl GridPoint {
    /// The objective used to rank the point: refined if available, else screened.
    pub fn objective(&self) -> Option<f64> {
        self.refined_objective.or(self.screen_objective)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub num_devices: u32,
    pub best_config: PolicyConfig,
    pub best_objective: f64,
    /// Full result of the winning point at the final budget.
    pub best_result: SimResult,
    pub table: Vec<GridPoint>,
}

fn sim_config(params: SystemParams, policy: PolicyConfig, budget: Budget, seed: u64) -> SimConfig {
    SimConfig {
        num_slots: budget.num_slots,
        warmup_slots: budget.warmup_slots,
        num_replications: budget.num_replications,
        seed,
        ..SimConfig::new(params, policy)
    }
}

/// Index of the smallest value, first index winning ties. NaN never wins.
fn argmin(values: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Search `grid` for the configuration minimizing the objective at `num_devices`.
pub fn grid_search(grid: &ParamGrid, num_devices: u32, base: &SystemParams) -> Result<OptResult> {
    let params = base.with_devices(num_devices);
    params.validate()?;
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::EmptyGrid(format!("{:?} grid has no points", grid.family)));
    }

    let screened: Vec<(GridPoint, Option<SimResult>)> = points
        .par_iter()
        .enumerate()
        .map(|(index, &config)| {
            let run = config
                .validate(&params)
                .and_then(|_| run_simulation(&sim_config(params, config, grid.screen, grid.seed)));
            let (screen_objective, screen_ci, error, result) = match run {
                Ok(r) => (Some(grid.objective.of(&r)), Some(r.ci_halfwidth_aaoi), None, Some(r)),
                Err(e) => (None, None, Some(e.to_string()), None),
            };
            let min_energy_observed = result.as_ref().map(|r| r.min_energy_observed);
            let point = GridPoint {
                index,
                config,
                screen_objective,
                screen_ci,
                refined_objective: None,
                refined_ci: None,
                min_energy_observed,
                error,
            };
            (point, result)
        })
        .collect();
    let (mut table, mut results): (Vec<GridPoint>, Vec<Option<SimResult>>) = screened.into_iter().unzip();

    let mut ranked: Vec<usize> = table
        .iter()
        .filter_map(|p| p.screen_objective.filter(|v| !v.is_nan()).map(|_| p.index))
        .collect();
    if ranked.is_empty() {
        let first = table.iter().find_map(|p| p.error.clone()).unwrap_or_default();
        return Err(Error::EmptyGrid(format!("every point failed; first error: {first}")));
    }
    // stable sort keeps grid order among ties
    ranked.sort_by(|&a, &b| {
        let (x, y) = (table[a].screen_objective.unwrap(), table[b].screen_objective.unwrap());
        x.total_cmp(&y)
    });

    let finalists: Vec<usize> = match grid.refine {
        Some(budget) => {
            let mut top: Vec<usize> = ranked.into_iter().take(grid.refine_top.max(1)).collect();
            top.sort_unstable();
            let refined: Vec<Result<SimResult>> = top
                .par_iter()
                .map(|&i| run_simulation(&sim_config(params, table[i].config, budget, grid.seed)))
                .collect();
            for (&i, r) in top.iter().zip(refined) {
                match r {
                    Ok(r) => {
                        table[i].refined_objective = Some(grid.objective.of(&r));
                        table[i].refined_ci = Some(r.ci_halfwidth_aaoi);
                        table[i].min_energy_observed = table[i]
                            .min_energy_observed
                            .map(|m| m.min(r.min_energy_observed));
                        results[i] = Some(r);
                    }
                    Err(e) => table[i].error = Some(e.to_string()),
                }
            }
            top.into_iter().filter(|&i| table[i].refined_objective.is_some()).collect()
        }
        None => ranked,
    };

    let best = argmin(finalists.iter().map(|&i| (i, table[i].objective().unwrap())))
        .ok_or_else(|| Error::EmptyGrid("no finalist survived refinement".into()))?;
    Ok(OptResult {
        num_devices,
        best_config: table[best].config,
        best_objective: table[best].objective().unwrap(),
        best_result: results[best].take().expect("finalist has a result"),
        table,
    })
}

/// Per-network-size optimum, as plotted against D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub num_devices: u32,
    pub best_config: PolicyConfig,
    pub aaoi: f64,
    pub avp: f64,
    pub ci_halfwidth_aaoi: f64,
    pub mean_energy: f64,
    pub min_energy_observed: u32,
}

impl SweepRow {
    pub fn from_opt(opt: &OptResult) -> Self {
        let r = &opt.best_result;
        Self {
            num_devices: opt.num_devices,
            best_config: opt.best_config,
            aaoi: r.aaoi,
            avp: r.avp,
            ci_halfwidth_aaoi: r.ci_halfwidth_aaoi,
            mean_energy: r.mean_energy_empirical,
            min_energy_observed: r.min_energy_observed,
        }
    }
}

/// Run [`grid_search`] at every network size in `d_values`.
pub fn sweep_over_d(d_values: &[u32], grid: &ParamGrid, base: &SystemParams) -> Result<Vec<SweepRow>> {
    if d_values.is_empty() {
        return Err(Error::param("d_values", "must list at least one network size"));
    }
    if let Some(&bad) = d_values.iter().find(|&&d| d == 0) {
        return Err(Error::param("d_values", format!("network sizes must be >= 1, got {bad}")));
    }
    d_values
        .iter()
        .map(|&d| grid_search(grid, d, base).map(|opt| SweepRow::from_opt(&opt)))
        .collect()
}

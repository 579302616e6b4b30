use eamac_core::dtmc::{solve_coupled, CoupledSolution, FictionalThreshold};
use eamac_core::optimizer::{grid_search, OptResult, ParamGrid};
use eamac_core::{run_simulation, PolicyConfig, SimResult, SystemParams};
use serde_json::Value;

use crate::config::{family_label, ExperimentConfig};
use crate::error::CliError;
use crate::output::{PlotPoint, Table};

/// What a command produced: the main table, optional side tables written next
/// to the main output, and the points for `--emit-plotdata`.
#[derive(Debug, Default)]
pub struct Report {
    pub table: Option<Table>,
    pub side_tables: Vec<(&'static str, Table)>,
    pub plot_points: Vec<PlotPoint>,
}

pub const RESULT_COLUMNS: &[&str] = &[
    "D",
    "policy",
    "aaoi",
    "avp",
    "ci",
    "mean_energy",
    "min_energy_observed",
    "successes",
    "collisions",
    "idle",
    "discards",
    "packets_generated",
    "num_slots",
    "warmup_slots",
    "num_replications",
    "seed",
    "config",
];

pub const AUDIT_COLUMNS: &[&str] = &[
    "D",
    "index",
    "policy",
    "config",
    "screen_objective",
    "screen_ci",
    "refined_objective",
    "refined_ci",
    "min_energy_observed",
    "best",
    "error",
];

fn float(x: f64) -> Value {
    Value::from(x)
}

fn opt_float(x: Option<f64>) -> Value {
    x.map_or(Value::Null, Value::from)
}

fn policy_json(p: &PolicyConfig) -> Value {
    Value::from(serde_json::to_string(p).expect("policy serializes"))
}

fn avp_of(r: &SimResult) -> Option<f64> {
    r.avp_defined.then_some(r.avp)
}

fn result_row(d: u32, label: &str, policy: &PolicyConfig, r: &SimResult) -> Vec<Value> {
    vec![
        Value::from(d),
        Value::from(label),
        float(r.aaoi),
        opt_float(avp_of(r)),
        float(r.ci_halfwidth_aaoi),
        float(r.mean_energy_empirical),
        Value::from(r.min_energy_observed),
        Value::from(r.counts.successes),
        Value::from(r.counts.collisions),
        Value::from(r.counts.idle),
        Value::from(r.counts.discards),
        Value::from(r.counts.packets_generated),
        Value::from(r.num_slots),
        Value::from(r.warmup_slots),
        Value::from(r.num_replications),
        Value::from(r.seed),
        policy_json(policy),
    ]
}

fn plot_point(d: u32, label: &str, r: &SimResult) -> PlotPoint {
    PlotPoint {
        num_devices: d,
        label: label.into(),
        aaoi: r.aaoi,
        avp: avp_of(r),
    }
}

fn push_audit(table: &mut Table, opt: &OptResult) {
    let best = opt
        .table
        .iter()
        .filter(|g| g.config == opt.best_config && g.refined_objective.is_some())
        .map(|g| g.index)
        .next();
    for g in &opt.table {
        table.push(vec![
            Value::from(opt.num_devices),
            Value::from(g.index),
            Value::from(g.config.label()),
            policy_json(&g.config),
            opt_float(g.screen_objective),
            opt_float(g.screen_ci),
            opt_float(g.refined_objective),
            opt_float(g.refined_ci),
            g.min_energy_observed.map_or(Value::Null, Value::from),
            Value::from(Some(g.index) == best),
            g.error.clone().map_or(Value::Null, Value::from),
        ]);
    }
}

fn simulate_one(
    cfg: &ExperimentConfig,
    params: SystemParams,
    policy: PolicyConfig,
) -> Result<SimResult, CliError> {
    policy.validate(&params)?;
    Ok(run_simulation(&cfg.sim.sim_config(params, policy))?)
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let policy = cfg.require_policy()?;
    let r = simulate_one(cfg, cfg.params, policy)?;
    let d = cfg.params.num_devices;
    let mut table = Table::new(RESULT_COLUMNS);
    table.push(result_row(d, &policy.label(), &policy, &r));
    Ok(Report {
        table: Some(table),
        side_tables: Vec::new(),
        plot_points: vec![plot_point(d, &policy.label(), &r)],
    })
}

/// With a `grid`, optimize at every D and report each winner (the full audit
/// table goes to a side file). Without one, simulate the fixed `policy` at every D.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let ds = cfg.device_counts()?;
    let mut report = Report::default();
    let mut table = Table::new(RESULT_COLUMNS);
    if let Some(grid) = &cfg.grid {
        let label = family_label(grid);
        let mut audit = Table::new(AUDIT_COLUMNS);
        for &d in &ds {
            let opt = grid_search(grid, d, &cfg.params)?;
            table.push(result_row(d, &label, &opt.best_config, &opt.best_result));
            report.plot_points.push(plot_point(d, &label, &opt.best_result));
            push_audit(&mut audit, &opt);
        }
        report.side_tables.push(("audit", audit));
    } else {
        let policy = cfg.require_policy()?;
        let label = policy.label();
        for &d in &ds {
            let r = simulate_one(cfg, cfg.params.with_devices(d), policy)?;
            table.push(result_row(d, &label, &policy, &r));
            report.plot_points.push(plot_point(d, &label, &r));
        }
    }
    report.table = Some(table);
    Ok(report)
}

pub fn optimize(cfg: &ExperimentConfig) -> Result<(Report, OptResult), CliError> {
    let grid = cfg.require_grid()?;
    let d = cfg.params.num_devices;
    let opt = grid_search(grid, d, &cfg.params)?;
    let mut audit = Table::new(AUDIT_COLUMNS);
    push_audit(&mut audit, &opt);
    let label = family_label(grid);
    let mut best = Table::new(RESULT_COLUMNS);
    best.push(result_row(d, &label, &opt.best_config, &opt.best_result));
    let report = Report {
        table: Some(audit),
        side_tables: vec![("best", best)],
        plot_points: vec![plot_point(d, &label, &opt.best_result)],
    };
    Ok((report, opt))
}

/// Evaluate every listed policy at every D with the shared seed. Optimized
/// entries are searched afresh at each D and refined at the simulation budget.
pub fn compare(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let entries = cfg.require_policies()?;
    let ds = cfg.device_counts()?;
    let mut report = Report::default();
    let mut table = Table::new(RESULT_COLUMNS);
    let mut audit = Table::new(AUDIT_COLUMNS);
    for &d in &ds {
        let params = cfg.params.with_devices(d);
        for e in entries {
            let label = e.label();
            let (policy, r) = match (&e.policy, &e.optimize) {
                (Some(p), _) => (*p, simulate_one(cfg, params, *p)?),
                (None, Some(grid)) => {
                    let grid = ParamGrid {
                        refine: Some(cfg.sim.budget()),
                        ..grid.clone()
                    };
                    let opt = grid_search(&grid, d, &cfg.params)?;
                    push_audit(&mut audit, &opt);
                    (opt.best_config, opt.best_result)
                }
                (None, None) => unreachable!("validated by require_policies"),
            };
            table.push(result_row(d, &label, &policy, &r));
            report.plot_points.push(plot_point(d, &label, &r));
        }
    }
    report.table = Some(table);
    if !audit.rows.is_empty() {
        report.side_tables.push(("audit", audit));
    }
    Ok(report)
}

pub const ANALYZE_COLUMNS: &[&str] = &["quantity", "state", "value"];

pub fn analysis_table(sol: &CoupledSolution) -> Table {
    let mut t = Table::new(ANALYZE_COLUMNS);
    for (i, &p) in sol.energy_dist.probs.iter().enumerate() {
        t.push(vec![
            Value::from("energy_dist"),
            Value::from(sol.energy_dist.state(i)),
            float(p),
        ]);
    }
    for (i, &p) in sol.aoi_dist.probs.iter().enumerate() {
        t.push(vec![
            Value::from("aoi_dist"),
            Value::from(sol.aoi_dist.state(i)),
            float(p),
        ]);
    }
    let scalar = |name: &str, v: Value| vec![Value::from(name), Value::Null, v];
    t.push(scalar("p_e", float(sol.p_e)));
    t.push(scalar("mean_energy", float(sol.mean_energy)));
    t.push(scalar("effective_p", float(sol.effective_p)));
    t.push(scalar("q", float(sol.q)));
    t.push(scalar(
        "fictional_t",
        match sol.fictional_t {
            FictionalThreshold::Age(a) => Value::from(a),
            FictionalThreshold::Never => Value::from("never"),
        },
    ));
    t.push(scalar("analytical_aaoi", float(sol.analytical_aaoi)));
    t.push(scalar("coupling_iterations", Value::from(sol.iterations)));
    t
}

pub fn analyze(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let policy = cfg.require_policy()?;
    let sol = solve_coupled(&cfg.params, &policy, cfg.analysis)?;
    Ok(Report {
        table: Some(analysis_table(&sol)),
        ..Report::default()
    })
}

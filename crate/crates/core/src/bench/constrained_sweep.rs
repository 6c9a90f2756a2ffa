use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::{build_instance, guarded, median, millis, run_parallel, write_csv, write_json};
use crate::constrained::{
    binding_budget, coptidice_solve, corsdice_solve, naive_constrained_semidice, ConstrainedConfig, ConstrainedResult,
};
use crate::divergence::FGenerator;
use crate::error::Result;
use crate::mdp::exact_signal_value;
use crate::solvers::OptimizerConfig;

pub const CONSTRAINED_COLUMNS: [&str; 14] = [
    "run",
    "seed",
    "algorithm",
    "c_tilde",
    "binding",
    "lambda",
    "estimated_cost",
    "exact_cost",
    "exact_return",
    "true_cost",
    "true_return",
    "feasible",
    "converged",
    "wall_ms",
];

pub const CONSTRAINED_ALGORITHMS: [&str; 3] = ["CORSDICE", "COptiDICE", "NaiveSemiDICE"];

/// Costs and returns are normalised. `exact_*` are on the MLE MDP (what the
/// solvers can know); `true_*` are on the generating MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedRow {
    pub run: usize,
    pub seed: u64,
    pub algorithm: String,
    pub c_tilde: f64,
    pub binding: bool,
    pub lambda: f64,
    pub estimated_cost: f64,
    pub exact_cost: f64,
    pub exact_return: f64,
    pub true_cost: f64,
    pub true_return: f64,
    pub feasible: bool,
    pub converged: bool,
    pub wall_ms: u64,
}

/// Aggregates over binding instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedSummary {
    pub algorithm: String,
    pub binding_runs: usize,
    /// Fraction with `exact_cost ≤ c_tilde·(1 + slack)`.
    pub feasible_rate: f64,
    pub violation_rate: f64,
    pub median_cost_gap: f64,
    pub mean_return_feasible: f64,
    pub converged_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedSweep {
    pub rows: Vec<ConstrainedRow>,
    pub summary: Vec<ConstrainedSummary>,
    pub failures: usize,
    pub csv_path: Option<PathBuf>,
    pub summary_path: Option<PathBuf>,
}

fn run_one(cfg: &ExperimentConfig, run: usize) -> Result<Vec<ConstrainedRow>> {
    let inst = build_instance(cfg, run, true)?;
    let model = &inst.model;
    let p = &cfg.constrained;
    let g = FGenerator::new(p.policy_generator);
    let g_state = FGenerator::new(cfg.solver.extraction_generator);
    let opt = OptimizerConfig { tol: cfg.solver.tol, max_iters: cfg.solver.max_iters, ..OptimizerConfig::default() }
        .with_alpha(p.alpha);
    let ccfg = ConstrainedConfig {
        lr_lambda: p.lr_lambda,
        lambda_max: p.lambda_max,
        outer_iters: p.outer_iters,
        slack: p.slack,
        fixed_lambda: None,
        extraction_generator: g_state,
    };
    let (spec, info) = binding_budget(model, &g, &inst.mdp.cost, &opt)?;
    let mut rows = Vec::new();
    for name in CONSTRAINED_ALGORITHMS {
        let start = Instant::now();
        let res: ConstrainedResult = match name {
            "CORSDICE" => corsdice_solve(model, &g, &g_state, &spec, &opt, &ccfg)?,
            "COptiDICE" => coptidice_solve(model, &g, &spec, &opt, &ccfg)?,
            _ => naive_constrained_semidice(model, &g, &spec, &opt, &ccfg)?,
        };
        let wall = start.elapsed();
        rows.push(ConstrainedRow {
            run,
            seed: super::mdp_seed(cfg.base_seed, run),
            algorithm: name.to_string(),
            c_tilde: spec.c_tilde,
            binding: info.binding,
            lambda: res.lambda_cost,
            estimated_cost: res.estimated_cost,
            exact_cost: res.exact_cost,
            exact_return: res.exact_return,
            true_cost: exact_signal_value(&inst.mdp, &res.policy, &inst.mdp.cost)?.normalized,
            true_return: exact_signal_value(&inst.mdp, &res.policy, &inst.mdp.reward)?.normalized,
            feasible: res.feasible,
            converged: res.converged,
            wall_ms: millis(wall, cfg.record_timing),
        });
    }
    Ok(rows)
}

pub fn summarize(rows: &[ConstrainedRow]) -> Vec<ConstrainedSummary> {
    CONSTRAINED_ALGORITHMS
        .iter()
        .map(|&name| {
            let group: Vec<&ConstrainedRow> = rows.iter().filter(|r| r.algorithm == name && r.binding).collect();
            let n = group.len();
            let rate = |k: usize| if n == 0 { f64::NAN } else { k as f64 / n as f64 };
            let feasible = group.iter().filter(|r| r.feasible).count();
            let feasible_returns: Vec<f64> = group.iter().filter(|r| r.feasible).map(|r| r.exact_return).collect();
            ConstrainedSummary {
                algorithm: name.to_string(),
                binding_runs: n,
                feasible_rate: rate(feasible),
                violation_rate: rate(n - feasible),
                median_cost_gap: median(group.iter().map(|r| (r.estimated_cost - r.exact_cost).abs())),
                mean_return_feasible: super::mean_std(feasible_returns).0,
                converged_rate: rate(group.iter().filter(|r| r.converged).count()),
            }
        })
        .collect()
}

/// CORSDICE, COptiDICE and naive constrained SemiDICE on seeded instances
/// with random costs and a budget between the cheapest and the unconstrained
/// policies. Writes `constrained.csv` and `constrained_summary.json` when
/// `write` is set.
pub fn run_constrained(cfg: &ExperimentConfig, write: bool) -> Result<ConstrainedSweep> {
    cfg.validate()?;
    let per_run = run_parallel(cfg.n_runs, |run| guarded(|| run_one(cfg, run)))?;
    let failures = per_run.iter().filter(|r| r.is_err()).count();
    let rows: Vec<ConstrainedRow> = per_run.into_iter().filter_map(|r| r.ok()).flatten().collect();
    let summary = summarize(&rows);
    let mut sweep = ConstrainedSweep { rows, summary, failures, csv_path: None, summary_path: None };
    if write {
        let csv_path = cfg.output_dir.join("constrained.csv");
        let summary_path = cfg.output_dir.join("constrained_summary.json");
        write_csv(&csv_path, &sweep.rows, &CONSTRAINED_COLUMNS)?;
        write_json(&summary_path, &sweep.summary)?;
        sweep.csv_path = Some(csv_path);
        sweep.summary_path = Some(summary_path);
    }
    Ok(sweep)
}

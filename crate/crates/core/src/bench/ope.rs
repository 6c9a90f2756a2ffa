use std::path::PathBuf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig};
use super::fig1::solve_algorithm;
use super::{build_instance, guarded, run_parallel, write_csv, write_json};
use crate::error::Result;
use crate::mdp::exact_signal_value;
use crate::metrics::{self, ope_rmse};
use crate::solvers::extract_tabular_policy;

pub const OPE_COLUMNS: [&str; 11] = [
    "run",
    "alpha",
    "exact_rho",
    "mle_rho",
    "raw_estimate",
    "extraction_estimate",
    "behavior_estimate",
    "behavior_rho",
    "viol_bf_raw",
    "viol_bf_extraction",
    "converged",
];

/// Normalised values: `exact_rho` on the true MDP, `mle_rho` on the MLE MDP.
/// `behavior_estimate` is the plain dataset average (`w ≡ 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeRow {
    pub run: usize,
    pub alpha: f64,
    pub exact_rho: f64,
    pub mle_rho: f64,
    pub raw_estimate: f64,
    pub extraction_estimate: f64,
    pub behavior_estimate: f64,
    pub behavior_rho: f64,
    pub viol_bf_raw: f64,
    pub viol_bf_extraction: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeSummary {
    pub alpha: f64,
    pub runs: usize,
    pub rmse_raw: f64,
    pub rmse_extraction: f64,
    /// RMSE of the dataset average against `ρ(π_D)`.
    pub rmse_behavior: f64,
    pub rmse_raw_vs_mle: f64,
    pub rmse_extraction_vs_mle: f64,
    /// `max − min` of `exact_rho` over runs.
    pub rho_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeSweep {
    pub rows: Vec<OpeRow>,
    pub summary: Vec<OpeSummary>,
    pub failures: usize,
    pub csv_path: Option<PathBuf>,
    pub summary_path: Option<PathBuf>,
}

fn run_one(cfg: &ExperimentConfig, run: usize) -> Result<Vec<OpeRow>> {
    let inst = build_instance(cfg, run, false)?;
    let model = &inst.model;
    let mle = model.empirical_mdp()?;
    let behavior_rho = exact_signal_value(&inst.mdp, &inst.behavior, &inst.mdp.reward)?.normalized;
    let ones = Array2::ones((model.n_states, model.n_actions));
    let behavior_estimate = metrics::ope_estimate(&ones, model, &model.reward_hat);
    let mut rows = Vec::new();
    for &alpha in &cfg.ope.alphas {
        let ext = solve_algorithm(model, Algorithm::Extraction, cfg.ope.generator, alpha, &cfg.solver)?;
        let w_raw = ext.policy_weights()?;
        let w_ext = ext.effective_w_sa()?;
        let policy = extract_tabular_policy(&ext, model)?.policy;
        rows.push(OpeRow {
            run,
            alpha,
            exact_rho: exact_signal_value(&inst.mdp, &policy, &inst.mdp.reward)?.normalized,
            mle_rho: exact_signal_value(&mle, &policy, &mle.reward)?.normalized,
            raw_estimate: metrics::ope_estimate(w_raw, model, &model.reward_hat),
            extraction_estimate: metrics::ope_estimate(&w_ext, model, &model.reward_hat),
            behavior_estimate,
            behavior_rho,
            viol_bf_raw: metrics::bellman_flow_violation(w_raw, model),
            viol_bf_extraction: metrics::bellman_flow_violation(&w_ext, model),
            converged: ext.diagnostics.converged,
        });
    }
    Ok(rows)
}

/// SemiDICE policies evaluated off-policy three ways: the raw policy
/// correction, the extracted `w(s)·w(a|s)` and the unweighted data. Writes
/// `ope.csv` and `ope_summary.json` when `write` is set.
pub fn run_ope_compare(cfg: &ExperimentConfig, write: bool) -> Result<OpeSweep> {
    cfg.validate()?;
    let per_run = run_parallel(cfg.n_runs, |run| guarded(|| run_one(cfg, run)))?;
    let failures = per_run.iter().filter(|r| r.is_err()).count();
    let rows: Vec<OpeRow> = per_run.into_iter().filter_map(|r| r.ok()).flatten().collect();
    let mut summary = Vec::new();
    for &alpha in &cfg.ope.alphas {
        let group: Vec<&OpeRow> = rows.iter().filter(|r| r.alpha == alpha).collect();
        if group.is_empty() {
            continue;
        }
        let rmse = |f: &dyn Fn(&OpeRow) -> (f64, f64)| ope_rmse(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
        let rho = group.iter().map(|r| r.exact_rho);
        let rho_range = rho.clone().fold(f64::NEG_INFINITY, f64::max) - rho.fold(f64::INFINITY, f64::min);
        summary.push(OpeSummary {
            alpha,
            runs: group.len(),
            rmse_raw: rmse(&|r| (r.raw_estimate, r.exact_rho))?,
            rmse_extraction: rmse(&|r| (r.extraction_estimate, r.exact_rho))?,
            rmse_behavior: rmse(&|r| (r.behavior_estimate, r.behavior_rho))?,
            rmse_raw_vs_mle: rmse(&|r| (r.raw_estimate, r.mle_rho))?,
            rmse_extraction_vs_mle: rmse(&|r| (r.extraction_estimate, r.mle_rho))?,
            rho_range,
        });
    }
    let mut sweep = OpeSweep { rows, summary, failures, csv_path: None, summary_path: None };
    if write {
        let csv_path = cfg.output_dir.join("ope.csv");
        let summary_path = cfg.output_dir.join("ope_summary.json");
        write_csv(&csv_path, &sweep.rows, &OPE_COLUMNS)?;
        write_json(&summary_path, &sweep.summary)?;
        sweep.csv_path = Some(csv_path);
        sweep.summary_path = Some(summary_path);
    }
    Ok(sweep)
}

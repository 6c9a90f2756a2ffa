//! Seeded experiment sweeps on random finite MDPs.
//!
//! Run `i` of an experiment uses the MDP seed `base_seed + i` and the data seed
//! `base_seed + i + 1_000_000`. Runs execute on a bounded rayon pool (size from
//! [`WORKERS_ENV`]) and are merged in run order, so every CSV is a pure
//! function of the [`ExperimentConfig`].

mod config;
mod constrained_sweep;
mod fig1;
mod ope;
mod plot;

pub use config::{
    Algorithm, AlgorithmSpec, ConstrainedParams, CostParams, DataParams, Experiment, ExperimentConfig, MdpParams,
    OpeParams, SolverParams, ALPHA_GRID, BETA_GRID,
};
pub use constrained_sweep::{
    run_constrained, ConstrainedRow, ConstrainedSummary, ConstrainedSweep, CONSTRAINED_COLUMNS,
};
pub use fig1::{run_fig1_sweep, solve_algorithm, CellSummary, Fig1Row, Fig1Sweep, FIG1_COLUMNS};
pub use ope::{run_ope_compare, OpeRow, OpeSummary, OpeSweep, OPE_COLUMNS};
pub use plot::{emit_plots, read_csv, PlotKind};

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constrained::attach_random_costs;
use crate::error::{Error, Result};
use crate::mdp::{
    behavior_policy, build_mle_model, collect_dataset, generate_random_mdp, Dataset, MleModel, TabularMdp,
    TabularPolicy,
};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "DICEBENCH_WORKERS";

/// Offset between the MDP and data seed streams.
pub const DATA_SEED_OFFSET: u64 = 1_000_000;

pub fn mdp_seed(base: u64, run: usize) -> u64 {
    base + run as u64
}

pub fn data_seed(base: u64, run: usize) -> u64 {
    base + run as u64 + DATA_SEED_OFFSET
}

/// Everything one run needs: the true MDP, the behaviour policy, the data and
/// the MLE model built from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub run: usize,
    pub mdp: TabularMdp,
    pub behavior: TabularPolicy,
    pub dataset: Dataset,
    pub model: MleModel,
}

/// Builds run `run` of `cfg`. Costs are attached (with the MDP seed) when
/// `with_costs` is set.
pub fn build_instance(cfg: &ExperimentConfig, run: usize, with_costs: bool) -> Result<Instance> {
    let p = &cfg.mdp;
    let seed = mdp_seed(cfg.base_seed, run);
    let mut mdp = generate_random_mdp(seed, p.n_states, p.n_actions, p.n_successors, p.gamma)?;
    if with_costs {
        mdp = attach_random_costs(&mdp, seed, cfg.cost.n_cost_states, cfg.cost.cost_value)?;
    }
    let behavior = behavior_policy(&mdp, p.optimal_weight)?;
    let dataset =
        collect_dataset(&mdp, &behavior, cfg.data.n_trajectories, cfg.data.horizon, data_seed(cfg.base_seed, run))?;
    let model = build_mle_model(&dataset, p.n_states, p.n_actions, p.gamma)?;
    Ok(Instance { run, mdp, behavior, dataset, model })
}

/// Worker count from [`WORKERS_ENV`], defaulting to the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// `f(0), …, f(n − 1)` on the worker pool, in index order.
pub fn run_parallel<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::param(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(&f).collect()))
}

/// Runs `f`, turning both errors and panics into a message.
pub fn guarded<T>(f: impl FnOnce() -> Result<T>) -> std::result::Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(e.to_string()),
        Err(panic) => Err(panic
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| panic.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "solver panicked".to_string())),
    }
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub(crate) fn millis(d: std::time::Duration, record: bool) -> u64 {
    if record {
        d.as_millis() as u64
    } else {
        0
    }
}

/// Mean and population standard deviation of the finite entries.
pub fn mean_std(values: impl IntoIterator<Item = f64>) -> (f64, f64, usize) {
    let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN, 0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt(), v.len())
}

/// Median of the finite entries.
pub fn median(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_streams() {
        assert_eq!(mdp_seed(10, 3), 13);
        assert_eq!(data_seed(10, 3), 1_000_013);
    }

    #[test]
    fn guarded_catches_panics_and_errors() {
        assert_eq!(guarded(|| Ok(3)), Ok(3));
        assert!(guarded::<()>(|| Err(Error::param("bad"))).unwrap_err().contains("bad"));
        assert!(guarded::<()>(|| panic!("boom")).unwrap_err().contains("boom"));
    }

    #[test]
    fn order_statistics() {
        assert_eq!(median([3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median([4.0, 1.0, 2.0, 3.0]), 2.5);
        let (m, s, n) = mean_std([1.0, 3.0, f64::NAN]);
        assert_eq!((m, s, n), (2.0, 1.0, 2));
    }

    #[test]
    fn parallel_preserves_order() {
        let out = run_parallel(50, |i| i * i).unwrap();
        assert_eq!(out, (0..50).map(|i| i * i).collect::<Vec<_>>());
    }
}

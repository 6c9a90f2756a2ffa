use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::divergence::GeneratorKind;
use crate::error::{Error, Result};

pub const ALPHA_GRID: [f64; 6] = [0.0001, 0.001, 0.01, 0.1, 1.0, 10.0];
pub const BETA_GRID: [f64; 6] = [0.1, 0.3, 0.5, 0.7, 0.9, 0.99];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Fig1Sweep,
    OpeCompare,
    Constrained,
    SingleRun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Optidice,
    Semidice,
    /// SemiDICE followed by state-correction extraction.
    Extraction,
    Fdvl,
    Odice,
    Sql,
    Xql,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Optidice,
        Algorithm::Semidice,
        Algorithm::Extraction,
        Algorithm::Fdvl,
        Algorithm::Odice,
        Algorithm::Sql,
        Algorithm::Xql,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Optidice => "OptiDICE",
            Algorithm::Semidice => "SemiDICE",
            Algorithm::Extraction => "Extraction",
            Algorithm::Fdvl => "f-DVL",
            Algorithm::Odice => "ODICE",
            Algorithm::Sql => "SQL",
            Algorithm::Xql => "XQL",
        }
    }

    /// `"alpha"` or `"beta"`.
    pub fn param_name(self) -> &'static str {
        match self {
            Algorithm::Fdvl | Algorithm::Odice => "beta",
            _ => "alpha",
        }
    }

    /// The generator the algorithm uses when none is configured.
    pub fn default_generator(self) -> GeneratorKind {
        match self {
            Algorithm::Sql => GeneratorKind::SqlChi2,
            Algorithm::Xql => GeneratorKind::Kl,
            _ => GeneratorKind::Chi2,
        }
    }

    /// The paper-style grid for the algorithm's parameter.
    pub fn default_grid(self) -> Vec<f64> {
        match self.param_name() {
            "beta" => BETA_GRID.to_vec(),
            _ => ALPHA_GRID.to_vec(),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.label().to_ascii_lowercase().replace('-', "") == key)
            .ok_or_else(|| Error::param(format!("unknown algorithm '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub algorithm: Algorithm,
    pub generator: GeneratorKind,
    pub grid: Vec<f64>,
}

impl AlgorithmSpec {
    pub fn standard(algorithm: Algorithm) -> AlgorithmSpec {
        AlgorithmSpec { algorithm, generator: algorithm.default_generator(), grid: algorithm.default_grid() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdpParams {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_successors: usize,
    pub gamma: f64,
    /// Weight of the optimal policy in the behaviour mixture.
    pub optimal_weight: f64,
}

impl Default for MdpParams {
    fn default() -> Self {
        Self { n_states: 30, n_actions: 4, n_successors: 4, gamma: 0.95, optimal_weight: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataParams {
    pub n_trajectories: usize,
    pub horizon: usize,
}

impl Default for DataParams {
    fn default() -> Self {
        Self { n_trajectories: 30, horizon: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    pub tol: f64,
    pub max_iters: usize,
    pub eta: f64,
    pub odice_max_iters: usize,
    pub odice_step_size: f64,
    pub extraction_generator: GeneratorKind,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 100_000,
            eta: 1.0,
            odice_max_iters: 20_000,
            odice_step_size: 0.5,
            extraction_generator: GeneratorKind::Kl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub n_cost_states: usize,
    pub cost_value: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self { n_cost_states: 5, cost_value: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstrainedParams {
    pub alpha: f64,
    pub policy_generator: GeneratorKind,
    pub lr_lambda: f64,
    pub lambda_max: f64,
    pub outer_iters: usize,
    pub slack: f64,
}

impl Default for ConstrainedParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            policy_generator: GeneratorKind::Chi2,
            lr_lambda: 0.05,
            lambda_max: 1e3,
            outer_iters: 200,
            slack: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpeParams {
    pub generator: GeneratorKind,
    pub alphas: Vec<f64>,
}

impl Default for OpeParams {
    fn default() -> Self {
        Self { generator: GeneratorKind::Chi2, alphas: vec![0.01, 0.1, 1.0] }
    }
}

/// One experiment, read from a single JSON file. Missing fields take the
/// defaults of [`ExperimentConfig::fig1`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub n_runs: usize,
    pub base_seed: u64,
    pub mdp: MdpParams,
    pub data: DataParams,
    pub algorithms: Vec<AlgorithmSpec>,
    pub solver: SolverParams,
    pub cost: CostParams,
    pub constrained: ConstrainedParams,
    pub ope: OpeParams,
    pub output_dir: PathBuf,
    /// Fill `wall_ms`; off by default so reruns are byte-identical.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::fig1()
    }
}

impl ExperimentConfig {
    /// 300 runs of every algorithm over its full grid.
    pub fn fig1() -> Self {
        Self {
            experiment: Experiment::Fig1Sweep,
            n_runs: 300,
            base_seed: 0,
            mdp: MdpParams::default(),
            data: DataParams::default(),
            algorithms: Algorithm::ALL.into_iter().map(AlgorithmSpec::standard).collect(),
            solver: SolverParams::default(),
            cost: CostParams::default(),
            constrained: ConstrainedParams::default(),
            ope: OpeParams::default(),
            output_dir: PathBuf::from("out"),
            record_timing: false,
        }
    }

    pub fn ope_compare() -> Self {
        Self { experiment: Experiment::OpeCompare, n_runs: 50, ..Self::fig1() }
    }

    pub fn constrained() -> Self {
        Self { experiment: Experiment::Constrained, n_runs: 100, ..Self::fig1() }
    }

    pub fn single_run() -> Self {
        Self { experiment: Experiment::SingleRun, n_runs: 1, ..Self::fig1() }
    }

    pub fn preset(experiment: Experiment) -> Self {
        match experiment {
            Experiment::Fig1Sweep => Self::fig1(),
            Experiment::OpeCompare => Self::ope_compare(),
            Experiment::Constrained => Self::constrained(),
            Experiment::SingleRun => Self::single_run(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::param("n_runs must be at least 1"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::param("no algorithms configured"));
        }
        for spec in &self.algorithms {
            if spec.grid.is_empty() {
                return Err(Error::param(format!("empty grid for {}", spec.algorithm)));
            }
            for &p in &spec.grid {
                let ok = match spec.algorithm.param_name() {
                    "beta" => p > 0.0 && p < 1.0,
                    _ => p > 0.0 && p.is_finite(),
                };
                if !ok {
                    return Err(Error::param(format!(
                        "{} {} = {p} out of range",
                        spec.algorithm,
                        spec.algorithm.param_name()
                    )));
                }
            }
        }
        if self.ope.alphas.is_empty() || self.ope.alphas.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::param("ope.alphas must be non-empty and positive"));
        }
        if self.data.n_trajectories == 0 || self.data.horizon == 0 {
            return Err(Error::param("dataset needs at least one trajectory and one step"));
        }
        if !(self.mdp.gamma > 0.0 && self.mdp.gamma < 1.0) {
            return Err(Error::param("gamma must lie in (0, 1)"));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iters == 0 || self.solver.odice_max_iters == 0 {
            return Err(Error::param("solver tol and iteration limits must be positive"));
        }
        Ok(())
    }

    /// Human-readable plan printed by `--dry-run`.
    pub fn plan(&self) -> String {
        let mut out = format!(
            "experiment {:?}: {} runs, seeds {}..{} (data +{}), |S|={} |A|={} successors={} γ={}, {} trajectories × {} steps\n",
            self.experiment,
            self.n_runs,
            self.base_seed,
            self.base_seed + self.n_runs as u64 - 1,
            super::DATA_SEED_OFFSET,
            self.mdp.n_states,
            self.mdp.n_actions,
            self.mdp.n_successors,
            self.mdp.gamma,
            self.data.n_trajectories,
            self.data.horizon,
        );
        match self.experiment {
            Experiment::Fig1Sweep | Experiment::SingleRun => {
                for spec in &self.algorithms {
                    out += &format!(
                        "  {} ({}) {} ∈ {:?}\n",
                        spec.algorithm,
                        spec.generator,
                        spec.algorithm.param_name(),
                        spec.grid
                    );
                }
            }
            Experiment::OpeCompare => {
                out += &format!(
                    "  SemiDICE ({}) α ∈ {:?}, extraction {}\n",
                    self.ope.generator, self.ope.alphas, self.solver.extraction_generator
                );
            }
            Experiment::Constrained => {
                let c = &self.constrained;
                out += &format!(
                    "  {} cost states of value {}, α={} ({}), lr={}, λ_max={}, {} outer iterations, slack {}\n",
                    self.cost.n_cost_states,
                    self.cost.cost_value,
                    c.alpha,
                    c.policy_generator,
                    c.lr_lambda,
                    c.lambda_max,
                    c.outer_iters,
                    c.slack
                );
            }
        }
        out += &format!("  output: {}\n", self.output_dir.display());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = ExperimentConfig::fig1();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"experiment": "ope_compare", "n_runs": 3}"#).unwrap();
        assert_eq!(partial.n_runs, 3);
        assert_eq!(partial.mdp, MdpParams::default());
    }

    #[test]
    fn rejects_bad_grids() {
        let mut cfg = ExperimentConfig::fig1();
        cfg.algorithms[3].grid = vec![1.5];
        assert!(cfg.validate().is_err());
        cfg.algorithms[3].grid.clear();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig { n_runs: 0, ..ExperimentConfig::fig1() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn algorithm_names_parse() {
        for a in Algorithm::ALL {
            assert_eq!(a.label().parse::<Algorithm>().unwrap(), a);
        }
        assert_eq!("fdvl".parse::<Algorithm>().unwrap(), Algorithm::Fdvl);
        assert!("dualdice".parse::<Algorithm>().is_err());
    }
}

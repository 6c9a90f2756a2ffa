//! Unconstrained DICE solvers on an [`MleModel`].
//!
//! [`optidice_solve`] minimises the full dual objective with damped Newton
//! steps. The semi-gradient family ([`semidice_solve`], [`fdvl_solve`],
//! [`sql_solve`], [`xql_solve`]) shares one fixed-point loop in which
//! `Q = r̃ + γ T̂ ν` is held fixed while every state's value is set to the
//! exact minimiser of its per-state loss. [`odice_solve`] runs orthogonal
//! gradient descent over enumerated transitions.

mod odice;
mod optidice;
mod policy;
mod semi;

pub use odice::{odice_direction, odice_objective, odice_solve, GradientMode};
pub use optidice::{optidice_gradient, optidice_objective, optidice_solve, optidice_solve_with_reward};
pub use policy::{extract_tabular_policy, ExtractedPolicy};
pub use semi::{
    fdvl_solve, semidice_solve, semidice_solve_from, solve_state, sql_solve, xql_solve, StateOperator, StateSolution,
};

use std::time::Duration;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{exact_policy_value, MleModel, Signal, TabularMdp};
use crate::metrics;
use crate::wire;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionKind {
    /// `w(s, a) = d_π(s, a) / d_D(s, a)`
    StateAction,
    /// `w(a|s) = π(a|s) / π_D(a|s)`
    PerPolicy,
    /// `w(s) = d_π(s) / d_D(s)`
    State,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    /// Gradient ∞-norm for the descent solvers, last ν change for the
    /// fixed-point solvers.
    pub final_grad_norm: f64,
    /// Some exponent hit the overflow clamp.
    pub saturated: bool,
}

/// Solver output: the corrections it produced and the dual variables behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSet {
    pub kind: CorrectionKind,
    #[serde(with = "wire::opt_mat2", default)]
    pub w_sa: Option<Array2<f64>>,
    #[serde(with = "wire::opt_mat2", default)]
    pub w_a_given_s: Option<Array2<f64>>,
    #[serde(with = "wire::opt_vec1", default)]
    pub w_s: Option<Array1<f64>>,
    #[serde(with = "wire::vec1")]
    pub nu: Array1<f64>,
    #[serde(with = "wire::opt_mat2", default)]
    pub q: Option<Array2<f64>>,
    #[serde(with = "wire::opt_vec1", default)]
    pub mu: Option<Array1<f64>>,
    #[serde(with = "wire::opt_vec1", default)]
    pub a_approx: Option<Array1<f64>>,
    pub lambda_cost: Option<f64>,
    pub diagnostics: SolverDiagnostics,
}

impl CorrectionSet {
    /// The state-action ratio this set stands for: `w(s, a)` as stored,
    /// `w(s)·w(a|s)` once a state correction is attached, and `w(a|s)` read as
    /// `w(s, a)` otherwise.
    pub fn effective_w_sa(&self) -> Result<Array2<f64>> {
        if let Some(w) = &self.w_sa {
            return Ok(w.clone());
        }
        let w = self.w_a_given_s.as_ref().ok_or_else(|| Error::param("correction set holds no usable correction"))?;
        Ok(match &self.w_s {
            Some(ws) => Array2::from_shape_fn(w.dim(), |(s, a)| ws[s] * w[[s, a]]),
            None => w.clone(),
        })
    }

    /// The correction used to build a policy: `w(s, a)` or `w(a|s)`.
    pub fn policy_weights(&self) -> Result<&Array2<f64>> {
        match self.kind {
            CorrectionKind::StateAction => self.w_sa.as_ref(),
            CorrectionKind::PerPolicy | CorrectionKind::State => self.w_a_given_s.as_ref(),
        }
        .ok_or_else(|| Error::param("correction set holds no usable correction"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub alpha: f64,
    /// f-DVL / ODICE weight, in (0, 1).
    pub beta: f64,
    /// ODICE projected-gradient weight.
    pub eta: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.5, eta: 1.0, max_iters: 100_000, tol: 1e-10, step_size: 0.5, seed: 0 }
    }
}

impl OptimizerConfig {
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::param("tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters must be at least 1"));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::param("step_size must be positive"));
        }
        Ok(())
    }

    pub(crate) fn check_alpha(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::param(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }

    pub(crate) fn check_beta(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::param(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        Ok(())
    }
}

/// Per-run summary of one correction against data and ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub viol_bellman_flow: f64,
    pub viol_policy_correction: f64,
    /// Normalised OPE estimates `Σ d_D·w·signal` with the empirical signals.
    pub ope_reward: f64,
    pub ope_cost: f64,
    /// Raw discounted return of the extracted policy on the true MDP.
    pub exact_return: f64,
    pub fallback_states: usize,
    pub wall_time: Duration,
}

impl SolveReport {
    pub fn evaluate(
        corr: &CorrectionSet,
        model: &MleModel,
        true_mdp: &TabularMdp,
        wall_time: Duration,
    ) -> Result<SolveReport> {
        let w = corr.effective_w_sa()?;
        let extracted = extract_tabular_policy(corr, model)?;
        let exact_return = exact_policy_value(true_mdp, &extracted.policy, Signal::Reward)?.raw;
        Ok(SolveReport {
            converged: corr.diagnostics.converged,
            iterations: corr.diagnostics.iterations,
            final_grad_norm: corr.diagnostics.final_grad_norm,
            viol_bellman_flow: metrics::bellman_flow_violation(&w, model),
            viol_policy_correction: metrics::policy_correction_violation(&w, model),
            ope_reward: metrics::ope_estimate(&w, model, &model.reward_hat),
            ope_cost: metrics::ope_estimate(&w, model, &model.cost_hat),
            exact_return,
            fallback_states: extracted.fallback_states.len(),
            wall_time,
        })
    }
}

pub(crate) fn inf_norm<'a>(v: impl IntoIterator<Item = &'a f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn check_model(model: &MleModel, reward: &Array2<f64>) -> Result<()> {
    if !model.support_mask.iter().any(|&b| b) {
        return Err(Error::param("model has no supported state-action pair"));
    }
    if reward.dim() != (model.n_states, model.n_actions) {
        return Err(Error::param("reward shape does not match model"));
    }
    Ok(())
}

/// One observed pair with its sparse successor distribution.
#[derive(Debug, Clone)]
pub(crate) struct PairEntry {
    pub s: usize,
    pub a: usize,
    pub d: f64,
    pub next: Vec<(usize, f64)>,
}

/// Sparse view of the data support shared by the iterative solvers.
#[derive(Debug, Clone)]
pub(crate) struct Support {
    pub pairs: Vec<PairEntry>,
    /// Supported states in index order.
    pub states: Vec<usize>,
    /// Position of a state in `states`.
    pub pos: Vec<Option<usize>>,
}

impl Support {
    pub fn new(model: &MleModel) -> Support {
        let mut pairs = Vec::new();
        for s in 0..model.n_states {
            for a in 0..model.n_actions {
                if !model.support_mask[[s, a]] {
                    continue;
                }
                let next = (0..model.n_states)
                    .filter_map(|sp| {
                        let p = model.transition_hat[[s, a, sp]];
                        (p > 0.0).then_some((sp, p))
                    })
                    .collect();
                pairs.push(PairEntry { s, a, d: model.d_d[[s, a]], next });
            }
        }
        let states = model.supported_states();
        let mut pos = vec![None; model.n_states];
        for (i, &s) in states.iter().enumerate() {
            pos[s] = Some(i);
        }
        Support { pairs, states, pos }
    }

    /// `Σ_{s'} T̂(s'|s, a) v(s')` for one pair.
    pub fn expect(&self, pair: &PairEntry, v: &Array1<f64>) -> f64 {
        pair.next.iter().map(|&(sp, p)| p * v[sp]).sum()
    }

    /// `r̃ + γ T̂ v` on supported pairs, zero elsewhere.
    pub fn backup(&self, model: &MleModel, reward: &Array2<f64>, v: &Array1<f64>) -> Array2<f64> {
        let mut q = Array2::zeros((model.n_states, model.n_actions));
        for pair in &self.pairs {
            q[[pair.s, pair.a]] = reward[[pair.s, pair.a]] + model.gamma * self.expect(pair, v);
        }
        q
    }
}

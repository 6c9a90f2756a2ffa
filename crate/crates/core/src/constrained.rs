//! Cost-constrained offline RL on tabular models.
//!
//! Every solver alternates an unconstrained solve on the penalised reward
//! `r − λc` with a projected gradient step on the cost multiplier:
//!
//! ```text
//! λ ← clip(λ + lr · (ĉ − C̃_lim) / (1 − γ), 0, λ_max)
//! ```
//!
//! and the three differ only in the correction and in the estimate `ĉ`:
//!
//! - [`coptidice_solve`]: OptiDICE `w(s, a)`, `ĉ = E_{d_D}[w(s, a) c]`.
//! - [`naive_constrained_semidice`]: SemiDICE `w(a|s)`, `ĉ = E_{d_D}[w(a|s) c]`.
//!   This is not an off-policy estimate of the cost and the constraint is
//!   generally not met.
//! - [`corsdice_solve`]: SemiDICE `w(a|s)` plus the extracted state
//!   correction, `ĉ = E_{d_D}[w(s) w(a|s) c]`.
//!
//! `exact_cost` and `exact_return` are the normalised values of the extracted
//! policy on the MLE MDP (states without data absorb with zero signal).

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::FGenerator;
use crate::error::{Error, Result};
use crate::extraction::{extract_direct_from, ExtractionResult};
use crate::mdp::{exact_signal_value, MleModel, TabularMdp, TabularPolicy};
use crate::metrics;
use crate::solvers::{
    extract_tabular_policy, optidice_solve_with_reward, semidice_solve, semidice_solve_from, CorrectionSet,
    OptimizerConfig,
};
use crate::wire;

/// A cost matrix with its budget. `c_tilde = (1 − γ)·c_lim` is the budget on
/// the normalised cost `E_{d_π}[c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    #[serde(with = "wire::mat2")]
    pub cost: Array2<f64>,
    pub c_lim: f64,
    pub c_tilde: f64,
}

impl CostSpec {
    pub fn new(cost: Array2<f64>, c_lim: f64, gamma: f64) -> Result<CostSpec> {
        if !(c_lim > 0.0) || !c_lim.is_finite() {
            return Err(Error::param(format!("c_lim must be positive, got {c_lim}")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::param(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        if cost.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(Error::param("costs must be finite and nonnegative"));
        }
        Ok(CostSpec { cost, c_lim, c_tilde: (1.0 - gamma) * c_lim })
    }

    /// Budget given on the normalised scale.
    pub fn from_normalized(cost: Array2<f64>, c_tilde: f64, gamma: f64) -> Result<CostSpec> {
        Self::new(cost, c_tilde / (1.0 - gamma), gamma)
    }

    fn validate(&self, model: &MleModel) -> Result<()> {
        if self.cost.dim() != (model.n_states, model.n_actions) {
            return Err(Error::param("cost shape does not match model"));
        }
        if self.c_tilde != (1.0 - model.gamma) * self.c_lim {
            return Err(Error::param("c_tilde must equal (1 − γ)·c_lim for the model's γ"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedConfig {
    pub lr_lambda: f64,
    pub lambda_max: f64,
    pub outer_iters: usize,
    /// `feasible` allows `exact_cost ≤ c_tilde·(1 + slack)`.
    pub slack: f64,
    /// Skip the multiplier updates and solve once at this λ.
    pub fixed_lambda: Option<f64>,
    /// Generator of the state-correction extraction (CORSDICE only).
    pub extraction_generator: FGenerator,
}

impl Default for ConstrainedConfig {
    fn default() -> Self {
        Self {
            lr_lambda: 0.05,
            lambda_max: 1e3,
            outer_iters: 200,
            slack: 0.05,
            fixed_lambda: None,
            extraction_generator: FGenerator::new(crate::divergence::GeneratorKind::Kl),
        }
    }
}

impl ConstrainedConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr_lambda > 0.0) || !(self.lambda_max > 0.0) || self.outer_iters == 0 || !(self.slack >= 0.0) {
            return Err(Error::param(
                "constrained config needs lr_lambda > 0, lambda_max > 0, outer_iters ≥ 1, slack ≥ 0",
            ));
        }
        if let Some(l) = self.fixed_lambda {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::param(format!("fixed lambda must be nonnegative, got {l}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedResult {
    pub correction: CorrectionSet,
    pub extraction: Option<ExtractionResult>,
    pub policy: TabularPolicy,
    /// The multiplier the final correction was solved with.
    pub lambda_cost: f64,
    /// The normalised cost estimate driving the λ updates.
    pub estimated_cost: f64,
    pub exact_cost: f64,
    pub exact_return: f64,
    /// λ before each solve, in order.
    pub lambda_history: Vec<f64>,
    pub feasible: bool,
    pub converged: bool,
    pub outer_iterations: usize,
}

/// One projected multiplier step.
pub fn lambda_step(lambda: f64, estimated_cost: f64, c_tilde: f64, gamma: f64, cfg: &ConstrainedConfig) -> f64 {
    (lambda + cfg.lr_lambda * (estimated_cost - c_tilde) / (1.0 - gamma)).clamp(0.0, cfg.lambda_max)
}

/// `cost_value` on every action of `n_cost_states` states drawn uniformly
/// among those without reward.
pub fn attach_random_costs(mdp: &TabularMdp, seed: u64, n_cost_states: usize, cost_value: f64) -> Result<TabularMdp> {
    if !(cost_value >= 0.0) || !cost_value.is_finite() {
        return Err(Error::param(format!("cost_value must be nonnegative, got {cost_value}")));
    }
    if n_cost_states >= mdp.n_states {
        return Err(Error::param(format!("{n_cost_states} cost states requested for {} states", mdp.n_states)));
    }
    let goals = mdp.goal_states();
    let candidates: Vec<usize> = (0..mdp.n_states).filter(|s| !goals.contains(s)).collect();
    if n_cost_states > candidates.len() {
        return Err(Error::param(format!("only {} non-goal states available for costs", candidates.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cost = Array2::zeros((mdp.n_states, mdp.n_actions));
    for i in sample(&mut rng, candidates.len(), n_cost_states) {
        cost.row_mut(candidates[i]).fill(cost_value);
    }
    mdp.clone().with_cost(cost)
}

struct Inner {
    correction: CorrectionSet,
    extraction: Option<ExtractionResult>,
    estimate: f64,
    ok: bool,
}

fn penalized(model: &MleModel, spec: &CostSpec, lambda: f64) -> Array2<f64> {
    &model.reward_hat - &(&spec.cost * lambda)
}

/// Shared multiplier loop. `solve(λ, previous)` returns the inner solution.
fn lagrangian_loop(
    model: &MleModel,
    spec: &CostSpec,
    ccfg: &ConstrainedConfig,
    mut solve: impl FnMut(f64, Option<&Inner>) -> Result<Inner>,
) -> Result<ConstrainedResult> {
    spec.validate(model)?;
    ccfg.validate()?;
    let mut lambda = ccfg.fixed_lambda.unwrap_or(0.0);
    let mut history = vec![lambda];
    let mut current = solve(lambda, None)?;
    let mut outer = 1;
    let mut inner_ok = current.ok;
    if ccfg.fixed_lambda.is_none() {
        while outer < ccfg.outer_iters {
            let next = lambda_step(lambda, current.estimate, spec.c_tilde, model.gamma, ccfg);
            assert!(next >= 0.0, "λ left the nonnegative orthant");
            if next == lambda {
                // the inner solve would be repeated verbatim
                break;
            }
            lambda = next;
            history.push(lambda);
            current = solve(lambda, Some(&current))?;
            inner_ok &= current.ok;
            outer += 1;
        }
    }

    let policy = extract_tabular_policy(&current.correction, model)?.policy;
    let mdp = model.to_mdp(&model.reward_hat, &spec.cost)?;
    let exact_cost = exact_signal_value(&mdp, &policy, &mdp.cost)?.normalized;
    let exact_return = exact_signal_value(&mdp, &policy, &mdp.reward)?.normalized;
    let settled = if lambda == 0.0 {
        current.estimate <= spec.c_tilde * (1.0 + ccfg.slack)
    } else {
        (current.estimate - spec.c_tilde).abs() <= ccfg.slack * spec.c_tilde
    };
    let mut correction = current.correction;
    correction.lambda_cost = Some(lambda);
    Ok(ConstrainedResult {
        correction,
        extraction: current.extraction,
        policy,
        lambda_cost: lambda,
        estimated_cost: current.estimate,
        exact_cost,
        exact_return,
        lambda_history: history,
        feasible: exact_cost <= spec.c_tilde * (1.0 + ccfg.slack),
        converged: inner_ok && (ccfg.fixed_lambda.is_some() || settled),
        outer_iterations: outer,
    })
}

/// OptiDICE on `r − λc` with the multiplier driven by `E_{d_D}[w(s, a) c]`.
pub fn coptidice_solve(
    model: &MleModel,
    g: &FGenerator,
    spec: &CostSpec,
    cfg: &OptimizerConfig,
    ccfg: &ConstrainedConfig,
) -> Result<ConstrainedResult> {
    lagrangian_loop(model, spec, ccfg, |lambda, prev| {
        let warm = prev.map(|p| &p.correction.nu);
        let correction = optidice_solve_with_reward(model, g, cfg, &penalized(model, spec, lambda), warm)?;
        let w = correction.effective_w_sa()?;
        Ok(Inner {
            estimate: metrics::ope_estimate(&w, model, &spec.cost),
            ok: correction.diagnostics.converged,
            correction,
            extraction: None,
        })
    })
}

/// SemiDICE on `r − λc` with the multiplier driven by `E_{d_D}[w(a|s) c]`.
pub fn naive_constrained_semidice(
    model: &MleModel,
    g: &FGenerator,
    spec: &CostSpec,
    cfg: &OptimizerConfig,
    ccfg: &ConstrainedConfig,
) -> Result<ConstrainedResult> {
    lagrangian_loop(model, spec, ccfg, |lambda, prev| {
        let correction = semi_step(model, g, spec, cfg, lambda, prev)?;
        let w = correction.policy_weights()?;
        Ok(Inner {
            estimate: metrics::ope_estimate(w, model, &spec.cost),
            ok: correction.diagnostics.converged,
            correction,
            extraction: None,
        })
    })
}

fn semi_step(
    model: &MleModel,
    g: &FGenerator,
    spec: &CostSpec,
    cfg: &OptimizerConfig,
    lambda: f64,
    prev: Option<&Inner>,
) -> Result<CorrectionSet> {
    let reward = penalized(model, spec, lambda);
    match prev {
        Some(p) => semidice_solve_from(model, g, cfg, Some(&reward), Some(&p.correction.nu)),
        None => semidice_solve(model, g, cfg, Some(&reward)),
    }
}

/// SemiDICE on `r − λc` followed by state-correction extraction; the
/// multiplier is driven by `E_{d_D}[w(s) w(a|s) c]`.
pub fn corsdice_solve(
    model: &MleModel,
    g_policy: &FGenerator,
    g_state: &FGenerator,
    spec: &CostSpec,
    cfg: &OptimizerConfig,
    ccfg: &ConstrainedConfig,
) -> Result<ConstrainedResult> {
    let ccfg = ConstrainedConfig { extraction_generator: *g_state, ..ccfg.clone() };
    let ext_cfg = OptimizerConfig { tol: cfg.tol.min(1e-10), ..*cfg };
    lagrangian_loop(model, spec, &ccfg, |lambda, prev| {
        let correction = semi_step(model, g_policy, spec, cfg, lambda, prev)?;
        let w = correction.policy_weights()?;
        let warm = prev.and_then(|p| p.extraction.as_ref()).map(|e| &e.mu);
        let extraction = extract_direct_from(model, w, g_state, &ext_cfg, warm)?;
        let w_sa = Array2::from_shape_fn(w.dim(), |(s, a)| extraction.w_s[s] * w[[s, a]]);
        let ok = correction.diagnostics.converged && extraction.converged;
        let correction = crate::extraction::attach_state_correction(&correction, &extraction);
        Ok(Inner {
            estimate: metrics::ope_estimate(&w_sa, model, &spec.cost),
            ok,
            correction,
            extraction: Some(extraction),
        })
    })
}

/// How a benchmark budget relates to the attainable costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetInfo {
    /// Normalised cost of the unconstrained SemiDICE policy.
    pub c_unconstrained: f64,
    /// Normalised cost of the SemiDICE policy that minimises cost alone.
    pub c_safe: f64,
    pub c_tilde: f64,
    /// The unconstrained policy exceeds the budget by more than 5%.
    pub binding: bool,
}

/// A budget halfway between the cheapest and the unconstrained SemiDICE
/// policies on the MLE MDP.
pub fn binding_budget(
    model: &MleModel,
    g: &FGenerator,
    cost: &Array2<f64>,
    cfg: &OptimizerConfig,
) -> Result<(CostSpec, BudgetInfo)> {
    if cost.dim() != (model.n_states, model.n_actions) {
        return Err(Error::param("cost shape does not match model"));
    }
    let mdp = model.to_mdp(&model.reward_hat, cost)?;
    let cost_of = |reward: &Array2<f64>| -> Result<f64> {
        let corr = semidice_solve(model, g, cfg, Some(reward))?;
        let policy = extract_tabular_policy(&corr, model)?.policy;
        Ok(exact_signal_value(&mdp, &policy, &mdp.cost)?.normalized)
    };
    let c_unconstrained = cost_of(&model.reward_hat)?;
    let c_safe = cost_of(&-cost)?;
    let c_tilde = c_safe + 0.5 * (c_unconstrained - c_safe);
    let binding = c_tilde > 0.0 && c_unconstrained > 1.05 * c_tilde;
    // a zero budget is rejected; keep a tiny positive one
    let spec = CostSpec::from_normalized(cost.clone(), c_tilde.max(1e-12), model.gamma)?;
    let c_tilde = spec.c_tilde;
    Ok((spec, BudgetInfo { c_unconstrained, c_safe, c_tilde, binding }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::GeneratorKind;
    use crate::mdp::{behavior_policy, build_mle_model, collect_dataset, generate_random_mdp};
    use crate::solvers::optidice_solve;

    const CHI2: FGenerator = FGenerator::new(GeneratorKind::Chi2);
    const KL: FGenerator = FGenerator::new(GeneratorKind::Kl);

    fn instance(seed: u64) -> (MleModel, Array2<f64>) {
        let mdp = generate_random_mdp(seed, 30, 4, 4, 0.95).unwrap();
        let mdp = attach_random_costs(&mdp, seed, 5, 1.0).unwrap();
        let pi = behavior_policy(&mdp, 0.5).unwrap();
        let ds = collect_dataset(&mdp, &pi, 30, 100, seed + 1_000_000).unwrap();
        let cost = mdp.cost.clone();
        (build_mle_model(&ds, 30, 4, 0.95).unwrap(), cost)
    }

    fn cfg() -> OptimizerConfig {
        OptimizerConfig::default().with_alpha(0.1).with_tol(1e-9)
    }

    #[test]
    fn random_costs() {
        let mdp = generate_random_mdp(1, 30, 4, 4, 0.95).unwrap();
        let a = attach_random_costs(&mdp, 7, 5, 1.0).unwrap();
        let b = attach_random_costs(&mdp, 7, 5, 1.0).unwrap();
        assert_eq!(a.cost, b.cost);
        let rows: Vec<usize> = (0..30).filter(|&s| a.cost.row(s).iter().any(|&c| c > 0.0)).collect();
        assert_eq!(rows.len(), 5);
        for s in &rows {
            assert!(a.cost.row(*s).iter().all(|&c| c == 1.0));
            assert!(!mdp.goal_states().contains(s));
        }
        assert!(attach_random_costs(&mdp, 7, 0, 1.0).unwrap().cost.iter().all(|&c| c == 0.0));
        assert!(attach_random_costs(&mdp, 7, 30, 1.0).is_err());
    }

    #[test]
    fn cost_spec_scaling() {
        let spec = CostSpec::new(Array2::zeros((2, 2)), 3.0, 0.9).unwrap();
        assert_eq!(spec.c_tilde, (1.0 - 0.9) * 3.0);
        assert!(CostSpec::new(Array2::zeros((2, 2)), 0.0, 0.9).is_err());
    }

    #[test]
    fn lambda_moves_with_the_violation() {
        let c = ConstrainedConfig::default();
        assert!(lambda_step(1.0, 0.2, 0.1, 0.95, &c) > 1.0);
        assert!(lambda_step(1.0, 0.05, 0.1, 0.95, &c) < 1.0);
        assert_eq!(lambda_step(0.0, 0.05, 0.1, 0.95, &c), 0.0);
        assert_eq!(lambda_step(999.0, 10.0, 0.1, 0.95, &c), 1e3);
    }

    #[test]
    fn zero_cost_reduces_to_unconstrained() {
        let (m, _) = instance(3);
        let spec = CostSpec::new(Array2::zeros((30, 4)), 1.0, 0.95).unwrap();
        let cc = ConstrainedConfig::default();
        let opt = coptidice_solve(&m, &CHI2, &spec, &cfg(), &cc).unwrap();
        let base = optidice_solve(&m, &CHI2, &cfg()).unwrap();
        assert_eq!(opt.lambda_cost, 0.0);
        assert!(crate::solvers::inf_norm(&(&opt.correction.nu - &base.nu)) < 1e-8);

        let semi = semidice_solve(&m, &CHI2, &cfg(), None).unwrap();
        let naive = naive_constrained_semidice(&m, &CHI2, &spec, &cfg(), &cc).unwrap();
        assert_eq!(naive.correction.nu, semi.nu);
        let cors = corsdice_solve(&m, &CHI2, &KL, &spec, &cfg(), &cc).unwrap();
        assert_eq!(cors.lambda_cost, 0.0);
        assert_eq!(cors.correction.nu, semi.nu);
        assert!(cors.extraction.is_some());
    }

    #[test]
    fn fixed_lambda_matches_penalized_semidice() {
        let (m, cost) = instance(4);
        let spec = CostSpec::new(cost.clone(), 1.0, 0.95).unwrap();
        for lambda in [0.0, 0.7, 3.0] {
            let cc = ConstrainedConfig { fixed_lambda: Some(lambda), ..ConstrainedConfig::default() };
            let cors = corsdice_solve(&m, &CHI2, &KL, &spec, &cfg(), &cc).unwrap();
            let reward = &m.reward_hat - &(&cost * lambda);
            let semi = semidice_solve(&m, &CHI2, &cfg(), Some(&reward)).unwrap();
            assert_eq!(cors.correction.nu, semi.nu);
            assert_eq!(cors.correction.q, semi.q);
        }
    }

    #[test]
    fn larger_lambda_lowers_exact_cost() {
        let (m, cost) = instance(5);
        let spec = CostSpec::new(cost, 1.0, 0.95).unwrap();
        let costs: Vec<f64> = [0.0, 1.0, 10.0]
            .iter()
            .map(|&l| {
                let cc = ConstrainedConfig { fixed_lambda: Some(l), ..ConstrainedConfig::default() };
                coptidice_solve(&m, &CHI2, &spec, &cfg(), &cc).unwrap().exact_cost
            })
            .collect();
        assert!(costs[0] >= costs[1] && costs[1] >= costs[2], "{costs:?}");
    }

    #[test]
    fn corsdice_estimate_is_valid_and_budget_met() {
        let mut binding = 0;
        for seed in 0..6 {
            let (m, cost) = instance(seed);
            let (spec, info) = binding_budget(&m, &CHI2, &cost, &cfg()).unwrap();
            if !info.binding {
                continue;
            }
            binding += 1;
            let cors = corsdice_solve(&m, &CHI2, &KL, &spec, &cfg(), &ConstrainedConfig::default()).unwrap();
            assert!(cors.lambda_history.iter().all(|&l| l >= 0.0));
            let viol = cors.extraction.as_ref().unwrap().viol_bellman_flow;
            assert!((cors.estimated_cost - cors.exact_cost).abs() <= 0.02f64.max(5.0 * viol));
            assert!(cors.exact_cost <= 1.05 * spec.c_tilde, "seed {seed}: {} vs {}", cors.exact_cost, spec.c_tilde);
        }
        assert!(binding > 0);
    }

    #[test]
    fn result_serializes_with_history() {
        let (m, cost) = instance(6);
        let spec = CostSpec::new(cost, 1.0, 0.95).unwrap();
        let cc = ConstrainedConfig { outer_iters: 3, ..ConstrainedConfig::default() };
        let r = coptidice_solve(&m, &CHI2, &spec, &cfg(), &cc).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("lambda_history"));
        let back: ConstrainedResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back.lambda_history, r.lambda_history);
    }
}

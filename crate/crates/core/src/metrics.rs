//! Constraint-violation metrics and off-policy evaluation.
//!
//! All sums run over states with data; flow that enters states without data
//! is reported separately by [`unsupported_inflow`].

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::MleModel;

/// `(1 − γ) p̂0(s) + γ (T̂_* d)(s) − Σ_a d(s, a)` for every state, where `d` is
/// an (unnormalised) state-action measure.
pub fn flow_residual(d: &Array2<f64>, model: &MleModel) -> Array1<f64> {
    let (ns, na) = (model.n_states, model.n_actions);
    let mut res = &model.p0_hat * (1.0 - model.gamma);
    for s in 0..ns {
        for a in 0..na {
            let m = d[[s, a]];
            if m == 0.0 {
                continue;
            }
            res[s] -= m;
            for sp in 0..ns {
                let p = model.transition_hat[[s, a, sp]];
                if p != 0.0 {
                    res[sp] += model.gamma * p * m;
                }
            }
        }
    }
    res
}

/// `d_w = w · d_D`, zero off the data support.
pub fn weighted_occupancy(w_sa: &Array2<f64>, model: &MleModel) -> Array2<f64> {
    Array2::from_shape_fn(
        w_sa.dim(),
        |(s, a)| {
            if model.support_mask[[s, a]] {
                w_sa[[s, a]] * model.d_d[[s, a]]
            } else {
                0.0
            }
        },
    )
}

/// L1 violation of the Bellman flow constraint by `w · d_D` over supported states.
pub fn bellman_flow_violation(w_sa: &Array2<f64>, model: &MleModel) -> f64 {
    let res = flow_residual(&weighted_occupancy(w_sa, model), model);
    res.iter().zip(model.d_d_state.iter()).filter(|(_, &d)| d > 0.0).map(|(r, _)| r.abs()).sum()
}

/// Mass the flow equation sends to states without data.
pub fn unsupported_inflow(w_sa: &Array2<f64>, model: &MleModel) -> f64 {
    let res = flow_residual(&weighted_occupancy(w_sa, model), model);
    res.iter().zip(model.d_d_state.iter()).filter(|(_, &d)| d == 0.0).map(|(r, _)| r.abs()).sum()
}

/// `Σ_a w(s, a) π_D(a|s)` per state (0 at states without data).
pub fn policy_correction_sums(w: &Array2<f64>, model: &MleModel) -> Array1<f64> {
    Array1::from_shape_fn(model.n_states, |s| {
        if model.d_d_state[s] == 0.0 {
            return 0.0;
        }
        (0..model.n_actions).filter(|&a| model.support_mask[[s, a]]).map(|a| w[[s, a]] * model.pi_d.probs[[s, a]]).sum()
    })
}

/// `Σ_s |Σ_a w(s, a) π_D(a|s) − 1|` over supported states.
pub fn policy_correction_violation(w: &Array2<f64>, model: &MleModel) -> f64 {
    policy_correction_sums(w, model)
        .iter()
        .zip(model.d_d_state.iter())
        .filter(|(_, &d)| d > 0.0)
        .map(|(x, _)| (x - 1.0).abs())
        .sum()
}

/// Supported states where the correction vanishes on every observed action.
pub fn sparse_states(w: &Array2<f64>, model: &MleModel) -> Vec<usize> {
    (0..model.n_states)
        .filter(|&s| model.d_d_state[s] > 0.0)
        .filter(|&s| (0..model.n_actions).filter(|&a| model.support_mask[[s, a]]).all(|a| w[[s, a]] <= 0.0))
        .collect()
}

/// `Σ d_D · w · signal`, the importance-weighted estimate of the normalised value.
pub fn ope_estimate(w_sa: &Array2<f64>, model: &MleModel, signal: &Array2<f64>) -> f64 {
    (weighted_occupancy(w_sa, model) * signal).sum()
}

/// Root-mean-square error of `(estimate, exact)` pairs.
pub fn ope_rmse(runs: &[(f64, f64)]) -> Result<f64> {
    if runs.is_empty() {
        return Err(Error::param("no runs to aggregate"));
    }
    let mse = runs.iter().map(|(e, x)| (e - x).powi(2)).sum::<f64>() / runs.len() as f64;
    Ok(mse.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub viol_bellman_flow: f64,
    pub viol_policy_correction: f64,
    pub n_sparse_states: usize,
    pub generator_name: String,
    pub alpha_or_beta: f64,
}

pub fn violation_report(
    w_sa: &Array2<f64>,
    model: &MleModel,
    generator_name: &str,
    alpha_or_beta: f64,
) -> ViolationReport {
    ViolationReport {
        viol_bellman_flow: bellman_flow_violation(w_sa, model),
        viol_policy_correction: policy_correction_violation(w_sa, model),
        n_sparse_states: sparse_states(w_sa, model).len(),
        generator_name: generator_name.to_string(),
        alpha_or_beta,
    }
}

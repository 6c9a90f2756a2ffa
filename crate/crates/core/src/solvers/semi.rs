//! The semi-gradient family: SemiDICE, f-DVL, SQL and XQL.
//!
//! Every member alternates `Q ← r̃ + γ T̂ V` with a per-state update of `V`
//! that depends only on the row `Q(s, ·)` and `π_D(·|s)`. Each per-state map is
//! monotone and commutes with adding a constant to `Q`, so the loop is a
//! γ-contraction like value iteration.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{check_model, CorrectionKind, CorrectionSet, OptimizerConfig, SolverDiagnostics, Support};
use crate::divergence::{FGenerator, EXP_CLAMP};
use crate::error::{Error, Result};
use crate::mdp::MleModel;

/// The per-state update of one semi-gradient method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum StateOperator {
    /// `ν` solves `Σ_a π_D max(0, (f')⁻¹((Q − ν)/α)) = 1`.
    SemiDice { generator: FGenerator, alpha: f64 },
    /// `ν` solves `Σ_a π_D max(0, (f')⁻¹(Q − ν)) = (1 − β)/β`.
    Fdvl { generator: FGenerator, beta: f64 },
    /// `V` minimises `V + α E_{π_D}[max(0, 1 + (Q − V)/2α)²]`.
    Sql { alpha: f64 },
    /// `V = α log E_{π_D}[exp(Q/α)]`.
    Xql { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSolution {
    /// The state value used in the backup (`ν` or `V`).
    pub value: f64,
    /// Correction per action, aligned with the input slices.
    pub w: Vec<f64>,
    pub saturated: bool,
}

const MAX_BRACKET_DOUBLINGS: usize = 200;
const MAX_BISECTIONS: usize = 2_000;

/// Root of the nonincreasing `h(v) = Σ_a π_a weight(Q_a − v) − target`,
/// bisected down to adjacent floating-point numbers.
fn bisect_root(q: &[f64], pi: &[f64], scale: f64, target: f64, weight: impl Fn(f64) -> f64) -> Option<f64> {
    let h = |v: f64| -> f64 { q.iter().zip(pi).map(|(&qa, &p)| p * weight(qa - v)).sum::<f64>() - target };
    let q_min = q.iter().copied().fold(f64::INFINITY, f64::min);
    let q_max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut width = scale;
    let (mut lo, mut hi) = (q_min - width, q_max + width);
    let mut found = false;
    for _ in 0..MAX_BRACKET_DOUBLINGS {
        if h(lo) >= 0.0 && h(hi) <= 0.0 {
            found = true;
            break;
        }
        width *= 2.0;
        lo = q_min - width;
        hi = q_max + width;
    }
    if !found || !lo.is_finite() || !hi.is_finite() {
        return None;
    }
    let (mut h_lo, mut h_hi) = (h(lo), h(hi));
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let hm = h(mid);
        if hm == 0.0 {
            return Some(mid);
        }
        if hm > 0.0 {
            lo = mid;
            h_lo = hm;
        } else {
            hi = mid;
            h_hi = hm;
        }
    }
    Some(if h_lo.abs() <= h_hi.abs() { lo } else { hi })
}

/// Numerically stable `α log Σ_a π_a exp(Q_a/α)`.
fn log_sum_exp(q: &[f64], pi: &[f64], alpha: f64) -> f64 {
    let m = q.iter().zip(pi).map(|(&qa, &p)| p.ln() + qa / alpha).fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = q.iter().zip(pi).map(|(&qa, &p)| (p.ln() + qa / alpha - m).exp()).sum();
    alpha * (m + s.ln())
}

/// Applies `op` to one state. `q` and `pi` list the observed actions only;
/// `state` is used for error reporting.
pub fn solve_state(op: &StateOperator, state: usize, q: &[f64], pi: &[f64]) -> Result<StateSolution> {
    let fail =
        |what: &str| Error::Numerical { state, reason: format!("{what}: no sign change found for the per-state root") };
    match *op {
        StateOperator::SemiDice { generator: g, alpha } => {
            let v = bisect_root(q, pi, alpha, 1.0, |x| g.f_star0_prime(x / alpha)).ok_or_else(|| fail("semidice"))?;
            let ys: Vec<f64> = q.iter().map(|&qa| (qa - v) / alpha).collect();
            Ok(StateSolution {
                value: v,
                saturated: ys.iter().any(|&y| g.saturates(y)),
                w: ys.iter().map(|&y| g.f_star0_prime(y)).collect(),
            })
        }
        StateOperator::Fdvl { generator: g, beta } => {
            let target = (1.0 - beta) / beta;
            let v = bisect_root(q, pi, 1.0, target, |x| g.f_star0_prime(x)).ok_or_else(|| fail("f-dvl"))?;
            Ok(StateSolution {
                value: v,
                saturated: q.iter().any(|&qa| g.saturates(qa - v)),
                w: q.iter().map(|&qa| g.f_star0_prime(qa - v)).collect(),
            })
        }
        StateOperator::Sql { alpha } => {
            let weight = |x: f64| (1.0 + x / (2.0 * alpha)).max(0.0);
            let v = bisect_root(q, pi, 2.0 * alpha, 1.0, weight).ok_or_else(|| fail("sql"))?;
            Ok(StateSolution { value: v, saturated: false, w: q.iter().map(|&qa| weight(qa - v)).collect() })
        }
        StateOperator::Xql { alpha } => {
            let v = log_sum_exp(q, pi, alpha);
            let ys: Vec<f64> = q.iter().map(|&qa| (qa - v) / alpha).collect();
            Ok(StateSolution {
                value: v,
                saturated: ys.iter().any(|&y| y < -EXP_CLAMP),
                w: ys.iter().map(|&y| y.exp()).collect(),
            })
        }
    }
}

struct StateRows {
    /// `(state, observed actions, π_D over them)`
    rows: Vec<(usize, Vec<usize>, Vec<f64>)>,
}

impl StateRows {
    fn new(model: &MleModel) -> StateRows {
        let rows = model
            .supported_states()
            .into_iter()
            .map(|s| {
                let acts: Vec<usize> = (0..model.n_actions).filter(|&a| model.support_mask[[s, a]]).collect();
                let pis = acts.iter().map(|&a| model.pi_d.probs[[s, a]]).collect();
                (s, acts, pis)
            })
            .collect();
        StateRows { rows }
    }
}

fn sweep(op: &StateOperator, rows: &StateRows, q: &Array2<f64>, out: &mut Array1<f64>) -> Result<()> {
    for (s, acts, pis) in &rows.rows {
        let qs: Vec<f64> = acts.iter().map(|&a| q[[*s, a]]).collect();
        out[*s] = solve_state(op, *s, &qs, pis)?.value;
    }
    Ok(())
}

/// The shared fixed-point loop.
pub(crate) fn fixed_point(
    model: &MleModel,
    op: &StateOperator,
    reward: &Array2<f64>,
    cfg: &OptimizerConfig,
    nu0: Option<&Array1<f64>>,
) -> Result<CorrectionSet> {
    cfg.validate()?;
    check_model(model, reward)?;
    let support = Support::new(model);
    let rows = StateRows::new(model);
    let mut v = Array1::<f64>::zeros(model.n_states);
    if let Some(init) = nu0 {
        for &s in &support.states {
            v[s] = init[s];
        }
    }
    let mut next = v.clone();
    let mut damping = 1.0;
    let mut prev_delta = f64::INFINITY;
    let mut delta = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let q = support.backup(model, reward, &v);
        sweep(op, &rows, &q, &mut next)?;
        delta = super::inf_norm(&(&next - &v));
        if !delta.is_finite() {
            break;
        }
        if delta > prev_delta * (1.0 + 1e-9) && delta > 1e-13 {
            damping = (damping * 0.5f64).max(1.0 / 1024.0);
        }
        prev_delta = delta;
        if damping == 1.0 {
            v.assign(&next);
        } else {
            v = &v + &((&next - &v) * damping);
        }
        if delta <= cfg.tol {
            break;
        }
    }

    // Final Q and the exact per-state answer at that Q.
    let q = support.backup(model, reward, &v);
    let mut nu = Array1::<f64>::zeros(model.n_states);
    let mut w = Array2::<f64>::zeros((model.n_states, model.n_actions));
    let mut saturated = false;
    for (s, acts, pis) in &rows.rows {
        let qs: Vec<f64> = acts.iter().map(|&a| q[[*s, a]]).collect();
        let sol = solve_state(op, *s, &qs, pis)?;
        nu[*s] = sol.value;
        saturated |= sol.saturated;
        for (&a, &x) in acts.iter().zip(&sol.w) {
            w[[*s, a]] = x;
        }
    }
    Ok(CorrectionSet {
        kind: CorrectionKind::PerPolicy,
        w_sa: None,
        w_a_given_s: Some(w),
        w_s: None,
        nu,
        q: Some(q),
        mu: None,
        a_approx: None,
        lambda_cost: None,
        diagnostics: SolverDiagnostics { converged: delta <= cfg.tol, iterations, final_grad_norm: delta, saturated },
    })
}

/// SemiDICE on the empirical reward or on `penalized_reward` when given.
pub fn semidice_solve(
    model: &MleModel,
    g: &FGenerator,
    cfg: &OptimizerConfig,
    penalized_reward: Option<&Array2<f64>>,
) -> Result<CorrectionSet> {
    semidice_solve_from(model, g, cfg, penalized_reward, None)
}

/// [`semidice_solve`] warm-started from `nu0`.
pub fn semidice_solve_from(
    model: &MleModel,
    g: &FGenerator,
    cfg: &OptimizerConfig,
    penalized_reward: Option<&Array2<f64>>,
    nu0: Option<&Array1<f64>>,
) -> Result<CorrectionSet> {
    cfg.check_alpha()?;
    let op = StateOperator::SemiDice { generator: *g, alpha: cfg.alpha };
    fixed_point(model, &op, penalized_reward.unwrap_or(&model.reward_hat), cfg, nu0)
}

pub fn fdvl_solve(model: &MleModel, g: &FGenerator, beta: f64, cfg: &OptimizerConfig) -> Result<CorrectionSet> {
    cfg.with_beta(beta).check_beta()?;
    let op = StateOperator::Fdvl { generator: *g, beta };
    fixed_point(model, &op, &model.reward_hat, cfg, None)
}

pub fn sql_solve(model: &MleModel, alpha: f64, cfg: &OptimizerConfig) -> Result<CorrectionSet> {
    cfg.with_alpha(alpha).check_alpha()?;
    fixed_point(model, &StateOperator::Sql { alpha }, &model.reward_hat, cfg, None)
}

pub fn xql_solve(model: &MleModel, alpha: f64, cfg: &OptimizerConfig) -> Result<CorrectionSet> {
    cfg.with_alpha(alpha).check_alpha()?;
    fixed_point(model, &StateOperator::Xql { alpha }, &model.reward_hat, cfg, None)
}

//! Full-gradient OptiDICE.
//!
//! Minimises the convex dual
//!
//! ```text
//! L(ν) = (1 − γ) Σ p̂0 ν + α Σ d_D f*₀(e_ν / α),   e_ν = r + γ T̂ν − ν
//! ```
//!
//! over the values of supported states (ν is 0 elsewhere). The gradient is
//! minus the Bellman flow residual of `w = (f*₀)'(e_ν / α)`, so a small
//! gradient means a flow-feasible correction.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};

use super::{check_model, inf_norm, CorrectionKind, CorrectionSet, OptimizerConfig, SolverDiagnostics, Support};
use crate::divergence::FGenerator;
use crate::error::Result;
use crate::mdp::linalg::solve_regularised;
use crate::mdp::MleModel;

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
/// Iterations without a new best gradient norm before giving up.
const STALL_LIMIT: usize = 25;

fn advantage(support: &Support, model: &MleModel, reward: &Array2<f64>, nu: &Array1<f64>, i: usize) -> f64 {
    let pair = &support.pairs[i];
    reward[[pair.s, pair.a]] + model.gamma * support.expect(pair, nu) - nu[pair.s]
}

fn objective(
    support: &Support,
    model: &MleModel,
    g: &FGenerator,
    alpha: f64,
    reward: &Array2<f64>,
    nu: &Array1<f64>,
) -> f64 {
    let init = (1.0 - model.gamma) * model.p0_hat.dot(nu);
    let loss: f64 = (0..support.pairs.len())
        .map(|i| support.pairs[i].d * alpha * g.f_star0(advantage(support, model, reward, nu, i) / alpha))
        .sum();
    init + loss
}

fn gradient(
    support: &Support,
    model: &MleModel,
    g: &FGenerator,
    alpha: f64,
    reward: &Array2<f64>,
    nu: &Array1<f64>,
) -> Array1<f64> {
    let mut grad = &model.p0_hat * (1.0 - model.gamma);
    for (i, pair) in support.pairs.iter().enumerate() {
        let m = pair.d * g.f_star0_prime(advantage(support, model, reward, nu, i) / alpha);
        grad[pair.s] -= m;
        for &(sp, p) in &pair.next {
            grad[sp] += model.gamma * p * m;
        }
    }
    for s in 0..model.n_states {
        if support.pos[s].is_none() {
            grad[s] = 0.0;
        }
    }
    grad
}

/// Dual objective at `nu` (all states; unsupported entries are treated as
/// fixed exits and should be 0).
pub fn optidice_objective(model: &MleModel, g: &FGenerator, alpha: f64, reward: &Array2<f64>, nu: &Array1<f64>) -> f64 {
    objective(&Support::new(model), model, g, alpha, reward, nu)
}

/// Analytic gradient of [`optidice_objective`] with respect to the values of
/// supported states; entries for unsupported states are 0.
pub fn optidice_gradient(
    model: &MleModel,
    g: &FGenerator,
    alpha: f64,
    reward: &Array2<f64>,
    nu: &Array1<f64>,
) -> Array1<f64> {
    gradient(&Support::new(model), model, g, alpha, reward, nu)
}

fn hessian(
    support: &Support,
    model: &MleModel,
    g: &FGenerator,
    alpha: f64,
    reward: &Array2<f64>,
    nu: &Array1<f64>,
) -> DMatrix<f64> {
    let n = support.states.len();
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut v: Vec<(usize, f64)> = Vec::new();
    for (i, pair) in support.pairs.iter().enumerate() {
        let curv = pair.d * g.f_star0_second(advantage(support, model, reward, nu, i) / alpha) / alpha;
        if curv == 0.0 {
            continue;
        }
        v.clear();
        // ∂e/∂ν = γ T̂(·|s,a) − 1_s restricted to supported coordinates
        if let Some(k) = support.pos[pair.s] {
            v.push((k, -1.0));
        }
        for &(sp, p) in &pair.next {
            if let Some(k) = support.pos[sp] {
                match v.iter_mut().find(|(j, _)| *j == k) {
                    Some(entry) => entry.1 += model.gamma * p,
                    None => v.push((k, model.gamma * p)),
                }
            }
        }
        for &(j, x) in &v {
            for &(k, y) in &v {
                h[(j, k)] += curv * x * y;
            }
        }
    }
    h
}

pub fn optidice_solve(model: &MleModel, g: &FGenerator, cfg: &OptimizerConfig) -> Result<CorrectionSet> {
    optidice_solve_with_reward(model, g, cfg, &model.reward_hat, None)
}

/// OptiDICE on an arbitrary reward matrix (e.g. `r − λc`), optionally
/// warm-started from `nu0`.
pub fn optidice_solve_with_reward(
    model: &MleModel,
    g: &FGenerator,
    cfg: &OptimizerConfig,
    reward: &Array2<f64>,
    nu0: Option<&Array1<f64>>,
) -> Result<CorrectionSet> {
    cfg.validate()?;
    cfg.check_alpha()?;
    check_model(model, reward)?;
    let alpha = cfg.alpha;
    let support = Support::new(model);
    let mut nu = match nu0 {
        Some(v) => Array1::from_shape_fn(model.n_states, |s| if support.pos[s].is_some() { v[s] } else { 0.0 }),
        None => Array1::zeros(model.n_states),
    };

    let mut value = objective(&support, model, g, alpha, reward, &nu);
    let mut grad = gradient(&support, model, g, alpha, reward, &nu);
    let mut grad_norm = inf_norm(&grad);
    let mut iterations = 0;
    let (mut best, mut since_best) = (grad_norm, 0);
    while grad_norm > cfg.tol && iterations < cfg.max_iters && since_best < STALL_LIMIT {
        iterations += 1;
        let h = hessian(&support, model, g, alpha, reward, &nu);
        let rhs = DVector::from_iterator(support.states.len(), support.states.iter().map(|&s| -grad[s]));
        let scale = (0..h.nrows()).map(|i| h[(i, i)]).fold(0.0, f64::max);
        let step = solve_regularised(&h, &rhs, 1e-10 * scale.max(1e-12)).unwrap_or_else(|| rhs.clone());
        let mut dir = Array1::<f64>::zeros(model.n_states);
        for (k, &s) in support.states.iter().enumerate() {
            dir[s] = step[k];
        }
        let slope = grad.dot(&dir);

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &nu + &(&dir * t);
            let v = objective(&support, model, g, alpha, reward, &cand);
            if v.is_finite() && v <= value + ARMIJO * t * slope {
                accepted = Some((cand, v));
                break;
            }
            t *= 0.5;
        }
        let (cand, v) = match accepted {
            Some(x) => x,
            None => {
                // Objective differences are below rounding: accept the full
                // step only if it still shrinks the gradient.
                let cand = &nu + &dir;
                let gn = inf_norm(&gradient(&support, model, g, alpha, reward, &cand));
                if gn < grad_norm {
                    let v = objective(&support, model, g, alpha, reward, &cand);
                    (cand, v)
                } else {
                    break;
                }
            }
        };
        nu = cand;
        value = v;
        grad = gradient(&support, model, g, alpha, reward, &nu);
        grad_norm = inf_norm(&grad);
        if grad_norm < best {
            best = grad_norm;
            since_best = 0;
        } else {
            since_best += 1;
        }
    }

    let q = support.backup(model, reward, &nu);
    let mut w = Array2::<f64>::zeros((model.n_states, model.n_actions));
    let mut saturated = false;
    for pair in &support.pairs {
        let y = (q[[pair.s, pair.a]] - nu[pair.s]) / alpha;
        saturated |= g.saturates(y);
        w[[pair.s, pair.a]] = g.f_star0_prime(y);
    }
    Ok(CorrectionSet {
        kind: CorrectionKind::StateAction,
        w_sa: Some(w),
        w_a_given_s: None,
        w_s: None,
        nu,
        q: Some(q),
        mu: None,
        a_approx: None,
        lambda_cost: None,
        diagnostics: SolverDiagnostics {
            converged: grad_norm <= cfg.tol,
            iterations,
            final_grad_norm: grad_norm,
            saturated,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::GeneratorKind;
    use crate::mdp::{
        behavior_policy, build_mle_model, collect_dataset, exact_stationary_distribution, generate_random_mdp,
        TabularMdp, TabularPolicy,
    };
    use crate::metrics::bellman_flow_violation;
    use crate::solvers::extract_tabular_policy;
    use ndarray::{array, Array3};

    fn benchmark_model(seed: u64, n_states: usize) -> (TabularMdp, MleModel) {
        let mdp = generate_random_mdp(seed, n_states, 4, 4.min(n_states), 0.95).unwrap();
        let pi = behavior_policy(&mdp, 0.5).unwrap();
        let ds = collect_dataset(&mdp, &pi, 30, 100, seed + 1_000_000).unwrap();
        let model = build_mle_model(&ds, n_states, 4, 0.95).unwrap();
        (mdp, model)
    }

    #[test]
    fn single_state_has_unit_correction() {
        let t = Array3::from_elem((1, 1, 1), 1.0);
        let mdp = TabularMdp::new(t, array![[0.0]], array![1.0], 0.9).unwrap();
        let model = MleModel::from_occupancy(&mdp, &TabularPolicy::uniform(1, 1)).unwrap();
        let corr =
            optidice_solve(&model, &FGenerator::new(GeneratorKind::Chi2), &OptimizerConfig::default().with_alpha(0.1))
                .unwrap();
        assert!(corr.diagnostics.converged);
        assert!((corr.w_sa.unwrap()[[0, 0]] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, kind) in [
            (1, GeneratorKind::Chi2),
            (2, GeneratorKind::Kl),
            (3, GeneratorKind::SoftChi2),
            (4, GeneratorKind::SqlChi2),
        ] {
            let (_, model) = benchmark_model(seed, 5);
            let g = FGenerator::new(kind);
            let nu = Array1::from_shape_fn(5, |s| if model.d_d_state[s] > 0.0 { 0.3 * s as f64 - 0.4 } else { 0.0 });
            let grad = optidice_gradient(&model, &g, 0.5, &model.reward_hat, &nu);
            let h = 1e-6;
            for s in model.supported_states() {
                let mut up = nu.clone();
                up[s] += h;
                let mut dn = nu.clone();
                dn[s] -= h;
                let fd = (optidice_objective(&model, &g, 0.5, &model.reward_hat, &up)
                    - optidice_objective(&model, &g, 0.5, &model.reward_hat, &dn))
                    / (2.0 * h);
                assert!((fd - grad[s]).abs() < 1e-6, "{kind} s={s}: {fd} vs {}", grad[s]);
            }
        }
    }

    #[test]
    fn converged_correction_is_flow_feasible() {
        for seed in 0..5 {
            let (_, model) = benchmark_model(seed, 5);
            let cfg = OptimizerConfig::default().with_alpha(0.01);
            let corr = optidice_solve(&model, &FGenerator::new(GeneratorKind::Chi2), &cfg).unwrap();
            assert!(corr.diagnostics.converged, "seed {seed}: {:?}", corr.diagnostics);
            let w = corr.w_sa.clone().unwrap();
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!(bellman_flow_violation(&w, &model) < 1e-3);

            // w·d_D is the occupancy of the extracted policy on the MLE MDP
            let pi = extract_tabular_policy(&corr, &model).unwrap().policy;
            let mle = model.empirical_mdp().unwrap();
            let d = exact_stationary_distribution(&mle, &pi).unwrap();
            let gap: f64 = (0..5)
                .flat_map(|s| (0..4).map(move |a| (s, a)))
                .filter(|&(s, _)| model.d_d_state[s] > 0.0)
                .map(|(s, a)| (w[[s, a]] * model.d_d[[s, a]] - d[[s, a]]).abs())
                .sum();
            assert!(gap < 1e-3, "seed {seed}: gap {gap}");
        }
    }

    #[test]
    fn benchmark_sized_runs_converge_for_all_alphas() {
        let (_, model) = benchmark_model(11, 30);
        for alpha in [1e-4, 1e-3, 0.01, 0.1, 1.0, 10.0] {
            for kind in [GeneratorKind::Chi2, GeneratorKind::Kl] {
                let cfg = OptimizerConfig::default().with_alpha(alpha).with_tol(1e-8);
                let corr = optidice_solve(&model, &FGenerator::new(kind), &cfg).unwrap();
                let w = corr.w_sa.unwrap();
                let viol = bellman_flow_violation(&w, &model);
                if !corr.diagnostics.saturated {
                    assert!(corr.diagnostics.converged, "{kind} α={alpha}: {:?}", corr.diagnostics);
                    assert!(viol < 1e-6, "{kind} α={alpha}: {viol}");
                }
            }
        }
    }
}

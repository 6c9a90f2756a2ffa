//! Recovering the state correction `w(s) = d_π(s) / d_D(s)` from a policy
//! correction `w(a|s)`.
//!
//! Both procedures minimise the convex dual
//!
//! ```text
//! L(μ) = (1 − γ) Σ p̂0 μ + Σ_s d_D(s) f*₀(y_μ(s)),
//! y_μ(s) = Σ_a π_D(a|s) w(a|s) (γ Σ_{s'} T̂(s'|s,a) μ(s') − μ(s))
//! ```
//!
//! whose optimum gives `w(s) = (f*₀)'(y_μ(s))` and makes `w(s)·w(a|s)·d_D`
//! satisfy the Bellman flow constraint. [`extract_direct`] takes damped Newton
//! steps on `L`. [`extract_bias_reduced`] alternates a least-squares fit of
//! `A(s) ≈ y_μ(s)` with gradient steps on `μ` through `(f*₀)'(A)`, either with
//! exact expectations or from sampled transitions.
//!
//! States without data are exits: `μ = 0` and `w(s) = 0` there.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::FGenerator;
use crate::error::{Error, Result};
use crate::mdp::linalg::solve_regularised;
use crate::mdp::MleModel;
use crate::metrics;
use crate::solvers::{inf_norm, CorrectionSet, OptimizerConfig};
use crate::wire;

/// Largest tolerated `|Σ_a w(a|s) π_D(a|s) − 1|`.
pub const POLICY_CORRECTION_TOL: f64 = 1e-6;

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const STALL_LIMIT: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    #[serde(with = "wire::vec1")]
    pub w_s: Array1<f64>,
    #[serde(with = "wire::vec1")]
    pub mu: Array1<f64>,
    #[serde(with = "wire::opt_vec1", default)]
    pub a_approx: Option<Array1<f64>>,
    /// Flow violation of `w(s)·w(a|s)` against the model.
    pub viol_bellman_flow: f64,
    pub converged: bool,
    pub iterations: usize,
    /// States with data; `w_s` is 0 elsewhere.
    pub state_mask: Vec<bool>,
    /// `‖w_s − w_s(exact)‖∞` for sampled runs.
    pub sample_gap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Sampling {
    /// Expectations over `d_D·T̂` computed exactly.
    Exact,
    /// `n` transitions drawn from `d_D·T̂` with the given seed.
    Samples { n: usize, seed: u64 },
}

/// `P_w(s'|s) = Σ_a π_D(a|s) w(a|s) T̂(s'|s,a)` as sparse rows, one per state.
struct Kernel {
    rows: Vec<Vec<(usize, f64)>>,
    mask: Vec<bool>,
    pos: Vec<Option<usize>>,
    states: Vec<usize>,
}

impl Kernel {
    fn new(model: &MleModel, w_policy: &Array2<f64>) -> Kernel {
        let mask = model.state_mask();
        let states: Vec<usize> = (0..model.n_states).filter(|&s| mask[s]).collect();
        let mut pos = vec![None; model.n_states];
        for (i, &s) in states.iter().enumerate() {
            pos[s] = Some(i);
        }
        let rows = (0..model.n_states)
            .map(|s| {
                let mut dense = vec![0.0; model.n_states];
                if mask[s] {
                    for a in 0..model.n_actions {
                        if !model.support_mask[[s, a]] {
                            continue;
                        }
                        let weight = model.pi_d.probs[[s, a]] * w_policy[[s, a]];
                        for (sp, p) in dense.iter_mut().enumerate() {
                            *p += weight * model.transition_hat[[s, a, sp]];
                        }
                    }
                }
                dense.into_iter().enumerate().filter(|&(_, p)| p != 0.0).collect()
            })
            .collect();
        Kernel { rows, mask, pos, states }
    }

    fn y(&self, gamma: f64, mu: &Array1<f64>) -> Array1<f64> {
        Array1::from_shape_fn(mu.len(), |s| {
            if !self.mask[s] {
                return 0.0;
            }
            gamma * self.rows[s].iter().map(|&(sp, p)| p * mu[sp]).sum::<f64>() - mu[s]
        })
    }

    /// `(1 − γ) p̂0 + Σ_s d(s) m(s) (γ P_w(·|s) − 1_s)` on supported states,
    /// where `m(s)` is the per-state multiplier.
    fn gradient(&self, model: &MleModel, m: &Array1<f64>) -> Array1<f64> {
        let mut g = &model.p0_hat * (1.0 - model.gamma);
        for &s in &self.states {
            let x = model.d_d_state[s] * m[s];
            g[s] -= x;
            for &(sp, p) in &self.rows[s] {
                g[sp] += model.gamma * p * x;
            }
        }
        for s in 0..g.len() {
            if !self.mask[s] {
                g[s] = 0.0;
            }
        }
        g
    }
}

fn check_policy_correction(model: &MleModel, w_policy: &Array2<f64>) -> Result<()> {
    if w_policy.dim() != (model.n_states, model.n_actions) {
        return Err(Error::param("w_policy shape does not match model"));
    }
    let sums = metrics::policy_correction_sums(w_policy, model);
    let mut worst: Option<(usize, f64)> = None;
    for s in model.supported_states() {
        let dev = (sums[s] - 1.0).abs();
        if !dev.is_finite() || worst.is_none_or(|(_, d)| dev > d) {
            worst = Some((s, dev));
        }
    }
    match worst {
        Some((s, dev)) if !(dev <= POLICY_CORRECTION_TOL) => Err(Error::Input {
            state: s,
            reason: format!("Σ_a w(a|s) π_D(a|s) deviates from 1 by {dev:e}; a policy correction is required"),
        }),
        _ => Ok(()),
    }
}

fn objective(kernel: &Kernel, model: &MleModel, g: &FGenerator, mu: &Array1<f64>) -> f64 {
    let y = kernel.y(model.gamma, mu);
    (1.0 - model.gamma) * model.p0_hat.dot(mu)
        + kernel.states.iter().map(|&s| model.d_d_state[s] * g.f_star0(y[s])).sum::<f64>()
}

fn direct_gradient(kernel: &Kernel, model: &MleModel, g: &FGenerator, mu: &Array1<f64>) -> Array1<f64> {
    let y = kernel.y(model.gamma, mu);
    kernel.gradient(model, &y.mapv(|v| g.f_star0_prime(v)))
}

/// The dual objective `L(μ)`.
pub fn extraction_objective(model: &MleModel, w_policy: &Array2<f64>, g: &FGenerator, mu: &Array1<f64>) -> f64 {
    objective(&Kernel::new(model, w_policy), model, g, mu)
}

/// Analytic gradient of [`extraction_objective`] (0 at states without data).
pub fn extraction_gradient(model: &MleModel, w_policy: &Array2<f64>, g: &FGenerator, mu: &Array1<f64>) -> Array1<f64> {
    direct_gradient(&Kernel::new(model, w_policy), model, g, mu)
}

fn finish(
    kernel: &Kernel,
    model: &MleModel,
    w_policy: &Array2<f64>,
    w_s: Array1<f64>,
    mu: Array1<f64>,
    a_approx: Option<Array1<f64>>,
    iterations: usize,
    converged: impl FnOnce(f64) -> bool,
) -> ExtractionResult {
    let w_sa = marginal(&w_s, w_policy);
    let viol = metrics::bellman_flow_violation(&w_sa, model);
    ExtractionResult {
        w_s,
        mu,
        a_approx,
        viol_bellman_flow: viol,
        converged: converged(viol),
        iterations,
        state_mask: kernel.mask.clone(),
        sample_gap: None,
    }
}

/// Newton's method on the dual with exact inner expectations.
pub fn extract_direct(
    model: &MleModel,
    w_policy: &Array2<f64>,
    g: &FGenerator,
    cfg: &OptimizerConfig,
) -> Result<ExtractionResult> {
    extract_direct_from(model, w_policy, g, cfg, None)
}

/// [`extract_direct`] warm-started from `mu0`.
pub fn extract_direct_from(
    model: &MleModel,
    w_policy: &Array2<f64>,
    g: &FGenerator,
    cfg: &OptimizerConfig,
    mu0: Option<&Array1<f64>>,
) -> Result<ExtractionResult> {
    cfg.validate()?;
    check_policy_correction(model, w_policy)?;
    let kernel = Kernel::new(model, w_policy);
    let n = kernel.states.len();
    let mut mu = Array1::<f64>::zeros(model.n_states);
    if let Some(init) = mu0 {
        for &s in &kernel.states {
            mu[s] = init[s];
        }
    }
    let flow_violation = |mu: &Array1<f64>| -> f64 {
        let w_s = kernel.y(model.gamma, mu).mapv(|v| g.f_star0_prime(v));
        let w_s = Array1::from_shape_fn(model.n_states, |s| if kernel.mask[s] { w_s[s] } else { 0.0 });
        metrics::bellman_flow_violation(&marginal(&w_s, w_policy), model)
    };

    let mut value = objective(&kernel, model, g, &mu);
    let mut grad = direct_gradient(&kernel, model, g, &mu);
    let mut grad_norm = inf_norm(&grad);
    let mut iterations = 0;
    let (mut best, mut since_best) = (grad_norm, 0);
    while iterations < cfg.max_iters && since_best < STALL_LIMIT {
        if grad_norm <= cfg.tol || flow_violation(&mu) <= cfg.tol {
            break;
        }
        iterations += 1;
        let y = kernel.y(model.gamma, &mu);
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut v: Vec<(usize, f64)> = Vec::new();
        for &s in &kernel.states {
            let curv = model.d_d_state[s] * g.f_star0_second(y[s]);
            if curv == 0.0 {
                continue;
            }
            v.clear();
            v.push((kernel.pos[s].expect("supported"), -1.0));
            for &(sp, p) in &kernel.rows[s] {
                if let Some(k) = kernel.pos[sp] {
                    match v.iter_mut().find(|(j, _)| *j == k) {
                        Some(e) => e.1 += model.gamma * p,
                        None => v.push((k, model.gamma * p)),
                    }
                }
            }
            for &(j, x) in &v {
                for &(k, z) in &v {
                    h[(j, k)] += curv * x * z;
                }
            }
        }
        let rhs = DVector::from_iterator(n, kernel.states.iter().map(|&s| -grad[s]));
        let scale = (0..n).map(|i| h[(i, i)]).fold(0.0, f64::max);
        let step = solve_regularised(&h, &rhs, 1e-10 * scale.max(1e-12)).unwrap_or_else(|| rhs.clone());
        let mut dir = Array1::<f64>::zeros(model.n_states);
        for (k, &s) in kernel.states.iter().enumerate() {
            dir[s] = step[k];
        }
        let slope = grad.dot(&dir);
        // below rounding of the objective, fall back to gradient-norm decrease
        let noisy = -slope < 1e-12 * value.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &mu + &(&dir * t);
            let val = objective(&kernel, model, g, &cand);
            let ok = if noisy {
                inf_norm(&direct_gradient(&kernel, model, g, &cand)) <= (1.0 - 0.5 * t) * grad_norm
            } else {
                val.is_finite() && val <= value + ARMIJO * t * slope
            };
            if ok {
                accepted = Some((cand, val));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, val)) = accepted else { break };
        mu = cand;
        value = val;
        grad = direct_gradient(&kernel, model, g, &mu);
        grad_norm = inf_norm(&grad);
        if grad_norm < best {
            best = grad_norm;
            since_best = 0;
        } else {
            since_best += 1;
        }
    }

    let y = kernel.y(model.gamma, &mu);
    let w_s = Array1::from_shape_fn(model.n_states, |s| if kernel.mask[s] { g.f_star0_prime(y[s]) } else { 0.0 });
    let tol = cfg.tol;
    Ok(finish(&kernel, model, w_policy, w_s, mu, None, iterations, |viol| viol <= tol || grad_norm <= tol))
}

/// Observed transitions `(s, a, s')` with multiplicities.
struct TripleSet {
    triples: Vec<(usize, usize, usize, f64)>,
    /// Total weight of triples starting in each state.
    state_weight: Array1<f64>,
}

impl TripleSet {
    fn exact(model: &MleModel) -> TripleSet {
        let mut triples = Vec::new();
        for s in 0..model.n_states {
            for a in 0..model.n_actions {
                if !model.support_mask[[s, a]] {
                    continue;
                }
                for sp in 0..model.n_states {
                    let p = model.transition_hat[[s, a, sp]];
                    if p > 0.0 {
                        triples.push((s, a, sp, model.d_d[[s, a]] * p));
                    }
                }
            }
        }
        TripleSet { triples, state_weight: model.d_d_state.clone() }
    }

    fn sampled(model: &MleModel, n: usize, seed: u64) -> TripleSet {
        let exact = Self::exact(model);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0usize; exact.triples.len()];
        for _ in 0..n {
            let i = crate::mdp::sample_categorical(&mut rng, exact.triples.iter().map(|t| t.3));
            counts[i] += 1;
        }
        let mut state_weight = Array1::zeros(model.n_states);
        let triples = exact
            .triples
            .iter()
            .zip(counts)
            .filter(|(_, c)| *c > 0)
            .map(|(&(s, a, sp, _), c)| {
                let w = c as f64 / n as f64;
                state_weight[s] += w;
                (s, a, sp, w)
            })
            .collect();
        TripleSet { triples, state_weight }
    }
}

/// Alternating `A`-fit / `μ`-step extraction.
///
/// Each iteration refits `A(s)` as the weighted mean of `w(a|s)(γμ(s') − μ(s))`
/// over the triples at `s` (the least-squares solution) and takes a
/// preconditioned gradient step of size `cfg.step_size` on
/// `(1 − γ) E_{p̂0}[μ] + E[(f*₀)'(A(s)) w(a|s) (γμ(s') − μ(s))]` with momentum.
/// In [`Sampling::Exact`] mode `A = y_μ` and the fixed point is that of
/// [`extract_direct`].
pub fn extract_bias_reduced(
    model: &MleModel,
    w_policy: &Array2<f64>,
    g: &FGenerator,
    cfg: &OptimizerConfig,
    sampling: Sampling,
) -> Result<ExtractionResult> {
    cfg.validate()?;
    check_policy_correction(model, w_policy)?;
    let kernel = Kernel::new(model, w_policy);
    let data = match sampling {
        Sampling::Exact => TripleSet::exact(model),
        Sampling::Samples { n, seed } => {
            if n == 0 {
                return Err(Error::param("sample count must be positive"));
            }
            TripleSet::sampled(model, n, seed)
        }
    };
    // μ is free only where the data has outgoing triples.
    let active: Vec<bool> = data.state_weight.iter().map(|&w| w > 0.0).collect();
    let a_init = g.f_prime(1.0);

    let fit = |mu: &Array1<f64>| -> Array1<f64> {
        let mut num = Array1::<f64>::zeros(model.n_states);
        for &(s, a, sp, wt) in &data.triples {
            num[s] += wt * w_policy[[s, a]] * (model.gamma * mu[sp] - mu[s]);
        }
        Array1::from_shape_fn(model.n_states, |s| if active[s] { num[s] / data.state_weight[s] } else { a_init })
    };
    let grad_at = |a: &Array1<f64>| -> Array1<f64> {
        let mut grad = &model.p0_hat * (1.0 - model.gamma);
        for &(s, act, sp, wt) in &data.triples {
            let m = wt * g.f_star0_prime(a[s]) * w_policy[[s, act]];
            grad[s] -= m;
            grad[sp] += model.gamma * m;
        }
        for s in 0..model.n_states {
            if !active[s] {
                grad[s] = 0.0;
            }
        }
        grad
    };
    let flow_violation = |a: &Array1<f64>| -> f64 {
        let w_s = Array1::from_shape_fn(model.n_states, |s| if kernel.mask[s] { g.f_star0_prime(a[s]) } else { 0.0 });
        metrics::bellman_flow_violation(&marginal(&w_s, w_policy), model)
    };

    // the sampled dual whose gradient the A-fit/μ-step pair follows
    let dual = |mu: &Array1<f64>, a: &Array1<f64>| -> f64 {
        (1.0 - model.gamma) * model.p0_hat.dot(mu)
            + (0..model.n_states).filter(|&s| active[s]).map(|s| data.state_weight[s] * g.f_star0(a[s])).sum::<f64>()
    };

    let mut mu = Array1::<f64>::zeros(model.n_states);
    let mut prev = mu.clone();
    let mut a = fit(&mu);
    let mut value = dual(&mu, &a);
    let mut grad_norm = inf_norm(&grad_at(&a));
    let mut step = cfg.step_size;
    let mut k = 0usize;
    let mut iterations = 0;
    let mut step_norm = f64::INFINITY;
    let exact_mode = sampling == Sampling::Exact;
    while iterations < cfg.max_iters {
        iterations += 1;
        let momentum = k as f64 / (k as f64 + 3.0);
        let look = &mu + &((&mu - &prev) * momentum);
        let grad = grad_at(&fit(&look));
        let mut next = look.clone();
        for s in 0..model.n_states {
            if active[s] {
                next[s] -= step * grad[s] / data.state_weight[s];
            }
        }
        let a_next = fit(&next);
        let v_next = dual(&next, &a_next);
        let gn_next = inf_norm(&grad_at(&a_next));
        let noise = 1e-13 * value.abs().max(1.0);
        let better = v_next < value || (v_next <= value + noise && gn_next < grad_norm);
        if !better {
            // restart momentum first, then shrink the step
            if k > 0 {
                k = 0;
                prev = mu.clone();
            } else {
                step *= 0.5;
                if step < 1e-12 {
                    break;
                }
            }
            continue;
        }
        k += 1;
        step = (step * 1.1).min(cfg.step_size);
        step_norm = inf_norm(&(&next - &mu));
        prev = std::mem::replace(&mut mu, next);
        a = a_next;
        value = v_next;
        grad_norm = gn_next;
        if step_norm <= cfg.tol || (exact_mode && flow_violation(&a) <= cfg.tol) {
            break;
        }
    }

    let w_s =
        Array1::from_shape_fn(
            model.n_states,
            |s| if kernel.mask[s] && active[s] { g.f_star0_prime(a[s]) } else { 0.0 },
        );
    let tol = cfg.tol;
    let mut res = finish(&kernel, model, w_policy, w_s, mu, Some(a), iterations, |viol| {
        step_norm <= tol || (exact_mode && viol <= tol)
    });
    if !exact_mode {
        let exact = extract_direct(model, w_policy, g, &OptimizerConfig { tol: 1e-10, ..*cfg })?;
        res.sample_gap = Some(inf_norm(&(&res.w_s - &exact.w_s)));
    }
    Ok(res)
}

fn marginal(w_s: &Array1<f64>, w_policy: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_fn(w_policy.dim(), |(s, a)| w_s[s] * w_policy[[s, a]])
}

/// `w(s, a) = w(s) · w(a|s)`.
pub fn marginal_correction(res: &ExtractionResult, w_policy: &Array2<f64>) -> Result<Array2<f64>> {
    if res.w_s.len() != w_policy.nrows() {
        return Err(Error::param("w_s length does not match w_policy rows"));
    }
    Ok(marginal(&res.w_s, w_policy))
}

/// A copy of `corr` carrying the state correction and `μ` from `res`.
pub fn attach_state_correction(corr: &CorrectionSet, res: &ExtractionResult) -> CorrectionSet {
    CorrectionSet {
        w_s: Some(res.w_s.clone()),
        mu: Some(res.mu.clone()),
        a_approx: res.a_approx.clone(),
        ..corr.clone()
    }
}

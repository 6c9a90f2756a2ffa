//! Ground-truth occupancy measures and policy values.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::sample_categorical;
use super::linalg::solve;
use super::{Signal, TabularMdp, TabularPolicy};
use crate::error::{Error, Result};

fn check_shapes(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<()> {
    if pi.probs.dim() != (mdp.n_states, mdp.n_actions) {
        return Err(Error::param(format!(
            "policy shape {:?} does not match MDP ({}, {})",
            pi.probs.dim(),
            mdp.n_states,
            mdp.n_actions
        )));
    }
    Ok(())
}

/// Normalised discounted state occupancy `d_π(s)`, the solution of
/// `(I − γ P_πᵀ) d = (1 − γ) p0`.
pub fn state_occupancy(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<Array1<f64>> {
    check_shapes(mdp, pi)?;
    let n = mdp.n_states;
    let mut a = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        for act in 0..mdp.n_actions {
            let p = pi.probs[[s, act]];
            if p == 0.0 {
                continue;
            }
            for sp in 0..n {
                // row sp of (I - γ P_πᵀ) collects inflow into sp
                a[(sp, s)] -= mdp.gamma * p * mdp.transition[[s, act, sp]];
            }
        }
    }
    let b = DVector::from_iterator(n, mdp.p0.iter().map(|&p| (1.0 - mdp.gamma) * p));
    let d = solve(a, b)?;
    Ok(Array1::from_iter(d.iter().map(|&x| x.max(0.0))))
}

/// Discounted state-action occupancy `d_π(s,a) = d_π(s)·π(a|s)`.
pub fn exact_stationary_distribution(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<Array2<f64>> {
    let ds = state_occupancy(mdp, pi)?;
    Ok(Array2::from_shape_fn((mdp.n_states, mdp.n_actions), |(s, a)| ds[s] * pi.probs[[s, a]]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyValue {
    /// `ρ(π) = Σ d_π·signal`
    pub normalized: f64,
    /// `ρ(π) / (1 − γ)`, the expected discounted sum.
    pub raw: f64,
}

pub fn exact_signal_value(mdp: &TabularMdp, pi: &TabularPolicy, signal: &Array2<f64>) -> Result<PolicyValue> {
    if signal.dim() != (mdp.n_states, mdp.n_actions) {
        return Err(Error::param("signal shape mismatch"));
    }
    let d = exact_stationary_distribution(mdp, pi)?;
    let normalized = (&d * signal).sum();
    Ok(PolicyValue { normalized, raw: normalized / (1.0 - mdp.gamma) })
}

pub fn exact_policy_value(mdp: &TabularMdp, pi: &TabularPolicy, signal: Signal) -> Result<PolicyValue> {
    exact_signal_value(mdp, pi, mdp.signal(signal))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub episodes: usize,
}

/// Monte-Carlo estimate of the normalised value `ρ(π)`.
///
/// Each episode continues with probability γ after every step, so the
/// episode length `T` satisfies `P(T > t) = γ^t` and
/// `(1 − γ) Σ_{t<T} signal(s_t, a_t)` is an unbiased estimate of `ρ(π)`.
pub fn rollout_value(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    signal: Signal,
    episodes: usize,
    seed: u64,
) -> Result<RolloutEstimate> {
    check_shapes(mdp, pi)?;
    if episodes < 2 {
        return Err(Error::param("need at least two episodes"));
    }
    let sig = mdp.signal(signal);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p0 = mdp.p0.to_vec();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..episodes {
        let mut s = sample_categorical(&mut rng, p0.iter().copied());
        let mut ret = 0.0;
        loop {
            let a = sample_categorical(&mut rng, pi.probs.row(s).iter().copied());
            ret += sig[[s, a]];
            if rng.random::<f64>() >= mdp.gamma {
                break;
            }
            s = sample_categorical(&mut rng, mdp.transition.slice(ndarray::s![s, a, ..]).iter().copied());
        }
        let x = (1.0 - mdp.gamma) * ret;
        sum += x;
        sum_sq += x * x;
    }
    let n = episodes as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(RolloutEstimate { mean, std_error: (var / n).sqrt(), episodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{generate_random_mdp, TabularPolicy};
    use ndarray::{array, Array3};

    fn recurrence_residual(mdp: &TabularMdp, pi: &TabularPolicy, d: &Array2<f64>) -> f64 {
        let mut worst = 0.0f64;
        for s in 0..mdp.n_states {
            let inflow: f64 = (0..mdp.n_states)
                .flat_map(|sb| (0..mdp.n_actions).map(move |ab| (sb, ab)))
                .map(|(sb, ab)| mdp.transition[[sb, ab, s]] * d[[sb, ab]])
                .sum();
            for a in 0..mdp.n_actions {
                let rhs = (1.0 - mdp.gamma) * mdp.p0[s] * pi.probs[[s, a]] + mdp.gamma * pi.probs[[s, a]] * inflow;
                worst = worst.max((d[[s, a]] - rhs).abs());
            }
        }
        worst
    }

    #[test]
    fn myopic_occupancy_is_initial_times_policy() {
        let mut mdp = generate_random_mdp(4, 6, 3, 2, 0.5).unwrap();
        mdp.gamma = 0.0;
        mdp.p0 = array![0.5, 0.25, 0.25, 0.0, 0.0, 0.0];
        let pi = TabularPolicy::uniform(6, 3);
        let d = exact_stationary_distribution(&mdp, &pi).unwrap();
        for s in 0..6 {
            for a in 0..3 {
                assert!((d[[s, a]] - mdp.p0[s] / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_state_chain_geometric_series() {
        let mut t = Array3::zeros((2, 1, 2));
        t[[0, 0, 1]] = 1.0;
        t[[1, 0, 1]] = 1.0;
        let mdp = TabularMdp::new(t, Array2::zeros((2, 1)), array![1.0, 0.0], 0.5).unwrap();
        let d = exact_stationary_distribution(&mdp, &TabularPolicy::uniform(2, 1)).unwrap();
        assert!((d[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((d[[1, 0]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn normalisation_and_recurrence() {
        for seed in 0..10 {
            let mdp = generate_random_mdp(seed, 12, 3, 4, 0.95).unwrap();
            let pi = TabularPolicy::uniform(12, 3);
            let d = exact_stationary_distribution(&mdp, &pi).unwrap();
            assert!((d.sum() - 1.0).abs() < 1e-10);
            assert!(d.iter().all(|&x| x >= 0.0));
            assert!(recurrence_residual(&mdp, &pi, &d) < 1e-10);
        }
    }

    #[test]
    fn value_special_signals() {
        let mut mdp = generate_random_mdp(3, 8, 2, 3, 0.9).unwrap();
        let pi = TabularPolicy::uniform(8, 2);
        mdp.reward.fill(0.0);
        let v = exact_policy_value(&mdp, &pi, Signal::Reward).unwrap();
        assert_eq!((v.normalized, v.raw), (0.0, 0.0));
        mdp.reward.fill(1.0);
        let v = exact_policy_value(&mdp, &pi, Signal::Reward).unwrap();
        assert!((v.normalized - 1.0).abs() < 1e-12);
        assert!((v.raw - 10.0).abs() < 1e-10);
        assert_eq!(v.raw * (1.0 - mdp.gamma), v.normalized);
    }

    #[test]
    fn rollout_agrees_with_oracle() {
        let mdp = generate_random_mdp(21, 10, 3, 3, 0.9).unwrap();
        let pi = TabularPolicy::uniform(10, 3);
        let exact = exact_policy_value(&mdp, &pi, Signal::Reward).unwrap().normalized;
        let mc = rollout_value(&mdp, &pi, Signal::Reward, 100_000, 5).unwrap();
        assert!((mc.mean - exact).abs() <= 3.0 * mc.std_error, "{} vs {exact} ± {}", mc.mean, mc.std_error);
    }
}

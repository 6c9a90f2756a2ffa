//! Exact finite-MDP machinery.
//!
//! [`TabularMdp`] and [`TabularPolicy`] are plain dense containers; the
//! functions here generate the random benchmark MDPs, plan on them and
//! provide the linear-algebra oracles ([`exact_stationary_distribution`],
//! [`exact_policy_value`]) every other module is checked against.

mod data;
pub(crate) mod linalg;
mod oracle;

pub(crate) use data::sample_categorical;
pub use data::{build_mle_model, collect_dataset, Dataset, MleModel, Transition};
pub use oracle::{
    exact_policy_value, exact_signal_value, exact_stationary_distribution, rollout_value, state_occupancy, PolicyValue,
    RolloutEstimate,
};

use ndarray::{Array1, Array2, Array3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wire;

pub const MDP_SCHEMA_VERSION: u32 = 1;

/// Initial state of generated benchmark MDPs.
pub const INITIAL_STATE: usize = 0;

const STOCHASTIC_TOL: f64 = 1e-12;

fn schema_version() -> u32 {
    MDP_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub n_states: usize,
    pub n_actions: usize,
    /// `transition[[s, a, s']]`
    #[serde(with = "wire::mat3")]
    pub transition: Array3<f64>,
    #[serde(with = "wire::mat2")]
    pub reward: Array2<f64>,
    #[serde(with = "wire::mat2")]
    pub cost: Array2<f64>,
    #[serde(with = "wire::vec1")]
    pub p0: Array1<f64>,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    Reward,
    Cost,
}

fn check_distribution(row: impl IntoIterator<Item = f64>, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for p in row {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::param(format!("{what}: negative or non-finite entry {p}")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::param(format!("{what}: sums to {sum}")));
    }
    Ok(())
}

impl TabularMdp {
    /// Builds and validates an MDP with an all-zero cost.
    pub fn new(transition: Array3<f64>, reward: Array2<f64>, p0: Array1<f64>, gamma: f64) -> Result<Self> {
        let (n_states, n_actions, _) = transition.dim();
        let mdp = Self {
            schema_version: MDP_SCHEMA_VERSION,
            n_states,
            n_actions,
            transition,
            reward,
            cost: Array2::zeros((n_states, n_actions)),
            p0,
            gamma,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn with_cost(mut self, cost: Array2<f64>) -> Result<Self> {
        self.cost = cost;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return Err(Error::param("MDP needs at least one state and one action"));
        }
        if self.transition.dim() != (ns, na, ns) {
            return Err(Error::param(format!(
                "transition has shape {:?}, expected {:?}",
                self.transition.dim(),
                (ns, na, ns)
            )));
        }
        if self.reward.dim() != (ns, na) || self.cost.dim() != (ns, na) {
            return Err(Error::param("reward/cost shape mismatch"));
        }
        if self.p0.len() != ns {
            return Err(Error::param("p0 length mismatch"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::param(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        for s in 0..ns {
            for a in 0..na {
                let row = self.transition.slice(ndarray::s![s, a, ..]);
                check_distribution(row.iter().copied(), &format!("T({s},{a},·)"))?;
            }
        }
        check_distribution(self.p0.iter().copied(), "p0")?;
        if self.cost.iter().any(|&c| c < 0.0) {
            return Err(Error::param("cost must be nonnegative"));
        }
        Ok(())
    }

    pub fn signal(&self, signal: Signal) -> &Array2<f64> {
        match signal {
            Signal::Reward => &self.reward,
            Signal::Cost => &self.cost,
        }
    }

    /// `Σ_{s'} T(s'|s,a) v(s')` for every pair.
    pub fn expected_next(&self, v: &Array1<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_states, self.n_actions));
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.transition.slice(ndarray::s![s, a, ..]);
                out[[s, a]] = row.dot(v);
            }
        }
        out
    }

    /// States with positive reward, in index order.
    pub fn goal_states(&self) -> Vec<usize> {
        (0..self.n_states).filter(|&s| self.reward.row(s).iter().any(|&r| r > 0.0)).collect()
    }
}

/// A stationary stochastic policy, `probs[[s, a]] = π(a|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    #[serde(with = "wire::mat2")]
    pub probs: Array2<f64>,
}

impl TabularPolicy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (s, row) in probs.outer_iter().enumerate() {
            check_distribution(row.iter().copied(), &format!("π(·|{s})"))?;
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64) }
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let mut probs = Array2::zeros((actions.len(), n_actions));
        for (s, &a) in actions.iter().enumerate() {
            probs[[s, a]] = 1.0;
        }
        Self { probs }
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[[s, a]]
    }
}

/// Random benchmark MDP: each pair moves to `n_successors` distinct uniformly
/// chosen states with `Dir(1, …, 1)` probabilities, the initial state is fixed
/// at [`INITIAL_STATE`], and a single goal state paying reward 1 under every
/// action is placed where it minimises the optimal initial-state value.
pub fn generate_random_mdp(
    seed: u64,
    n_states: usize,
    n_actions: usize,
    n_successors: usize,
    gamma: f64,
) -> Result<TabularMdp> {
    if n_states == 0 || n_actions == 0 || n_successors == 0 {
        return Err(Error::param("sizes must be positive"));
    }
    if n_successors > n_states {
        return Err(Error::param(format!("n_successors {n_successors} exceeds n_states {n_states}")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::param(format!("gamma {gamma} outside [0, 1)")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Array3::zeros((n_states, n_actions, n_states));
    for s in 0..n_states {
        for a in 0..n_actions {
            let mut succ = index::sample(&mut rng, n_states, n_successors).into_vec();
            succ.sort_unstable();
            // Dir(1,…,1) as normalised unit exponentials.
            let draws: Vec<f64> = (0..n_successors).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let total: f64 = draws.iter().sum();
            for (&sp, &x) in succ.iter().zip(&draws) {
                transition[[s, a, sp]] = x / total;
            }
            renormalise(transition.slice_mut(ndarray::s![s, a, ..]));
        }
    }

    let mut p0 = Array1::zeros(n_states);
    p0[INITIAL_STATE] = 1.0;

    let mut mdp = TabularMdp::new(transition, Array2::zeros((n_states, n_actions)), p0, gamma)?;

    let mut best: Option<(usize, f64)> = None;
    for goal in 0..n_states {
        mdp.reward.fill(0.0);
        mdp.reward.row_mut(goal).fill(1.0);
        let v = linalg::optimal_values(&mdp)?;
        let v0 = v[INITIAL_STATE];
        if best.is_none_or(|(_, b)| v0 < b) {
            best = Some((goal, v0));
        }
    }
    let (goal, _) = best.expect("at least one state");
    mdp.reward.fill(0.0);
    mdp.reward.row_mut(goal).fill(1.0);
    Ok(mdp)
}

/// Forces an exactly normalised row by folding the rounding residue into the
/// largest entry.
fn renormalise(mut row: ndarray::ArrayViewMut1<f64>) {
    let total: f64 = row.sum();
    row.mapv_inplace(|p| p / total);
    let residue = 1.0 - row.sum();
    if let Some(i) = argmax(row.iter().copied()) {
        row[i] += residue;
    }
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone)]
pub struct ValueIterationResult {
    pub q: Array2<f64>,
    pub v: Array1<f64>,
    pub policy: TabularPolicy,
    pub iterations: usize,
}

/// Value iteration until `‖V_k − V_{k−1}‖∞ ≤ tol`; the returned policy is
/// greedy in `Q*` with lowest-index tie-breaking.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<ValueIterationResult> {
    if !(tol > 0.0) {
        return Err(Error::param("tol must be positive"));
    }
    let mut v = Array1::<f64>::zeros(mdp.n_states);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let q = &mdp.reward + &(mdp.expected_next(&v) * mdp.gamma);
        let v_new = q.map_axis(ndarray::Axis(1), |row| row.fold(f64::NEG_INFINITY, |m, &x| m.max(x)));
        let diff = (&v_new - &v).iter().fold(0.0f64, |m, &d| m.max(d.abs()));
        v = v_new;
        if diff <= tol {
            break;
        }
    }
    let q = &mdp.reward + &(mdp.expected_next(&v) * mdp.gamma);
    let greedy: Vec<usize> = q.outer_iter().map(|row| argmax(row.iter().copied()).unwrap_or(0)).collect();
    Ok(ValueIterationResult { policy: TabularPolicy::deterministic(&greedy, mdp.n_actions), q, v, iterations })
}

/// `weight·p1 + (1 − weight)·p2`, row by row.
pub fn mixture_policy(p1: &TabularPolicy, p2: &TabularPolicy, weight: f64) -> Result<TabularPolicy> {
    if p1.probs.dim() != p2.probs.dim() {
        return Err(Error::param("policy shapes differ"));
    }
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::param(format!("mixture weight {weight} outside [0, 1]")));
    }
    if weight == 1.0 {
        return Ok(p1.clone());
    }
    if weight == 0.0 {
        return Ok(p2.clone());
    }
    Ok(TabularPolicy { probs: &p1.probs * weight + &p2.probs * (1.0 - weight) })
}

/// The benchmark's behaviour policy `0.5·π* + 0.5·π_unif`.
pub fn behavior_policy(mdp: &TabularMdp, optimal_weight: f64) -> Result<TabularPolicy> {
    let vi = value_iteration(mdp, 1e-10)?;
    mixture_policy(&vi.policy, &TabularPolicy::uniform(mdp.n_states, mdp.n_actions), optimal_weight)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_state_chain(gamma: f64) -> TabularMdp {
        // 0 -> 1 deterministically, 1 self-loops.
        let mut t = Array3::zeros((2, 1, 2));
        t[[0, 0, 1]] = 1.0;
        t[[1, 0, 1]] = 1.0;
        TabularMdp::new(t, Array2::zeros((2, 1)), ndarray::array![1.0, 0.0], gamma).unwrap()
    }

    #[test]
    fn benchmark_sizes() {
        let mdp = generate_random_mdp(7, 30, 4, 4, 0.95).unwrap();
        assert_eq!((mdp.n_states, mdp.n_actions, mdp.gamma), (30, 4, 0.95));
        assert_eq!(mdp.goal_states().len(), 1);
        assert_eq!(mdp.p0[INITIAL_STATE], 1.0);
        for s in 0..30 {
            for a in 0..4 {
                let nz = mdp.transition.slice(ndarray::s![s, a, ..]).iter().filter(|&&p| p > 0.0).count();
                assert_eq!(nz, 4);
            }
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let a = generate_random_mdp(7, 30, 4, 4, 0.95).unwrap();
        let b = generate_random_mdp(7, 30, 4, 4, 0.95).unwrap();
        assert_eq!(a, b);
        let c = generate_random_mdp(8, 30, 4, 4, 0.95).unwrap();
        assert_ne!(a.transition, c.transition);
    }

    #[test]
    fn single_successor_gives_point_masses() {
        let mdp = generate_random_mdp(3, 10, 3, 1, 0.9).unwrap();
        assert!(mdp.transition.iter().all(|&p| p == 0.0 || p == 1.0));
    }

    #[test]
    fn invalid_sizes_are_rejected() {
        assert!(generate_random_mdp(0, 3, 2, 4, 0.9).is_err());
        assert!(generate_random_mdp(0, 3, 2, 2, 1.0).is_err());
        assert!(generate_random_mdp(0, 0, 2, 1, 0.5).is_err());
    }

    #[test]
    fn goal_minimises_initial_value() {
        let mdp = generate_random_mdp(11, 8, 2, 3, 0.9).unwrap();
        let goal = mdp.goal_states()[0];
        let v_goal = value_iteration(&mdp, 1e-12).unwrap().v[INITIAL_STATE];
        for g in 0..8 {
            let mut alt = mdp.clone();
            alt.reward.fill(0.0);
            alt.reward.row_mut(g).fill(1.0);
            let v = value_iteration(&alt, 1e-12).unwrap().v[INITIAL_STATE];
            assert!(v >= v_goal - 1e-9, "goal {goal} not minimal: {g} gives {v} < {v_goal}");
        }
    }

    #[test]
    fn zero_reward_values_are_zero() {
        let mut mdp = generate_random_mdp(1, 10, 3, 3, 0.9).unwrap();
        mdp.reward.fill(0.0);
        let vi = value_iteration(&mdp, 1e-10).unwrap();
        assert!(vi.v.iter().all(|&v| v == 0.0));
        assert!(vi.policy.probs.column(0).iter().all(|&p| p == 1.0), "ties go to action 0");
    }

    #[test]
    fn myopic_q_is_reward() {
        let mut mdp = generate_random_mdp(1, 6, 3, 2, 0.0).unwrap();
        mdp.reward = Array2::from_shape_fn((6, 3), |(s, a)| (s * 3 + a) as f64 * 0.1);
        let vi = value_iteration(&mdp, 1e-12).unwrap();
        assert_eq!(vi.q, mdp.reward);
    }

    #[test]
    fn bellman_optimality_residual() {
        let mdp = generate_random_mdp(5, 30, 4, 4, 0.95).unwrap();
        let tol = 1e-10;
        let vi = value_iteration(&mdp, tol).unwrap();
        let q = &mdp.reward + &(mdp.expected_next(&vi.v) * mdp.gamma);
        for s in 0..30 {
            let best = q.row(s).fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            assert!((best - vi.v[s]).abs() <= tol / (1.0 - mdp.gamma));
        }
    }

    #[test]
    fn greedy_policy_beats_random_policies() {
        let mdp = generate_random_mdp(9, 15, 3, 3, 0.9).unwrap();
        let vi = value_iteration(&mdp, 1e-12).unwrap();
        let best = exact_policy_value(&mdp, &vi.policy, Signal::Reward).unwrap().normalized;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let mut probs = Array2::from_shape_fn((15, 3), |_| rng.random::<f64>() + 1e-3);
            for mut row in probs.outer_iter_mut() {
                let s = row.sum();
                row.mapv_inplace(|p| p / s);
            }
            let pi = TabularPolicy { probs };
            let v = exact_policy_value(&mdp, &pi, Signal::Reward).unwrap().normalized;
            assert!(best >= v - 1e-12);
        }
    }

    #[test]
    fn mixture_of_benchmark() {
        let mdp = generate_random_mdp(2, 10, 4, 4, 0.95).unwrap();
        let pi_d = behavior_policy(&mdp, 0.5).unwrap();
        for row in pi_d.probs.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            let max = row.fold(0.0f64, |m, &x| m.max(x));
            assert!((max - (0.5 + 0.5 / 4.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn mixture_degenerate_and_quarter() {
        let p1 = TabularPolicy::deterministic(&[1, 0, 2], 3);
        let p2 = TabularPolicy::uniform(3, 3);
        assert_eq!(mixture_policy(&p1, &p2, 1.0).unwrap(), p1);
        let m = mixture_policy(&p1, &p2, 0.25).unwrap();
        for (s, &a) in [1usize, 0, 2].iter().enumerate() {
            assert!((m.prob(s, a) - (0.25 + 0.75 / 3.0)).abs() < 1e-15);
            assert!((m.probs.row(s).sum() - 1.0).abs() < 1e-15);
        }
        assert!(mixture_policy(&p1, &TabularPolicy::uniform(2, 3), 0.5).is_err());
        assert!(mixture_policy(&p1, &p2, 1.5).is_err());
    }

    #[test]
    fn json_schema_field_names() {
        let mdp = two_state_chain(0.5);
        let v: serde_json::Value = serde_json::to_value(&mdp).unwrap();
        for key in ["n_states", "n_actions", "transition", "reward", "cost", "p0", "gamma"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["transition"][0][0][1], 1.0);
        let back: TabularMdp = serde_json::from_value(v).unwrap();
        assert_eq!(back, mdp);
    }
}

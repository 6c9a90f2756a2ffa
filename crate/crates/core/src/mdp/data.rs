//! Offline datasets and the maximum-likelihood model built from them.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TabularMdp, TabularPolicy, MDP_SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::wire;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub episode: usize,
    pub t: usize,
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub c: f64,
    pub s_next: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema_version: u32,
    pub n_states: usize,
    pub n_actions: usize,
    pub n_trajectories: usize,
    pub horizon: usize,
    /// Grouped by episode, in time order.
    pub transitions: Vec<Transition>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Draws an index from unnormalised nonnegative weights; falls back to the last
/// positive entry when rounding leaves the cumulative sum short of `u`.
pub(crate) fn sample_categorical<R: Rng>(rng: &mut R, probs: impl IntoIterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.into_iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Fixed-horizon rollouts of `pi` starting from `p0`.
pub fn collect_dataset(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    n_trajectories: usize,
    horizon: usize,
    seed: u64,
) -> Result<Dataset> {
    if horizon == 0 {
        return Err(Error::param("horizon must be at least 1"));
    }
    if pi.probs.dim() != (mdp.n_states, mdp.n_actions) {
        return Err(Error::param("policy shape does not match MDP"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::with_capacity(n_trajectories * horizon);
    for episode in 0..n_trajectories {
        let mut s = sample_categorical(&mut rng, mdp.p0.iter().copied());
        for t in 0..horizon {
            let a = sample_categorical(&mut rng, pi.probs.row(s).iter().copied());
            let s_next = sample_categorical(&mut rng, mdp.transition.slice(ndarray::s![s, a, ..]).iter().copied());
            transitions.push(Transition { episode, t, s, a, r: mdp.reward[[s, a]], c: mdp.cost[[s, a]], s_next });
            s = s_next;
        }
    }
    Ok(Dataset {
        schema_version: MDP_SCHEMA_VERSION,
        n_states: mdp.n_states,
        n_actions: mdp.n_actions,
        n_trajectories,
        horizon,
        transitions,
    })
}

/// Dataset-derived model. `d_d` is the undiscounted empirical frequency of
/// `(s, a)` records; unseen pairs carry a uniform placeholder transition and a
/// uniform behaviour policy at states with no data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleModel {
    pub schema_version: u32,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    #[serde(with = "wire::mat3")]
    pub transition_hat: Array3<f64>,
    #[serde(with = "wire::mat2")]
    pub d_d: Array2<f64>,
    #[serde(with = "wire::vec1")]
    pub d_d_state: Array1<f64>,
    pub pi_d: TabularPolicy,
    #[serde(with = "wire::vec1")]
    pub p0_hat: Array1<f64>,
    #[serde(with = "wire::mat2")]
    pub support_mask: Array2<bool>,
    /// Empirical mean reward per pair (0 where unseen).
    #[serde(with = "wire::mat2")]
    pub reward_hat: Array2<f64>,
    #[serde(with = "wire::mat2")]
    pub cost_hat: Array2<f64>,
}

pub fn build_mle_model(dataset: &Dataset, n_states: usize, n_actions: usize, gamma: f64) -> Result<MleModel> {
    if dataset.is_empty() {
        return Err(Error::param("dataset is empty"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::param(format!("gamma {gamma} outside [0, 1)")));
    }
    let mut counts = Array3::<f64>::zeros((n_states, n_actions, n_states));
    let mut pair = Array2::<f64>::zeros((n_states, n_actions));
    let mut reward_sum = Array2::<f64>::zeros((n_states, n_actions));
    let mut cost_sum = Array2::<f64>::zeros((n_states, n_actions));
    let mut starts = Array1::<f64>::zeros(n_states);
    for tr in &dataset.transitions {
        if tr.s >= n_states || tr.s_next >= n_states || tr.a >= n_actions {
            return Err(Error::param(format!("record out of bounds: {tr:?}")));
        }
        counts[[tr.s, tr.a, tr.s_next]] += 1.0;
        pair[[tr.s, tr.a]] += 1.0;
        reward_sum[[tr.s, tr.a]] += tr.r;
        cost_sum[[tr.s, tr.a]] += tr.c;
        if tr.t == 0 {
            starts[tr.s] += 1.0;
        }
    }
    let total = dataset.len() as f64;
    let support_mask = pair.mapv(|n| n > 0.0);
    let d_d = pair.mapv(|n| n / total);
    let d_d_state = d_d.sum_axis(ndarray::Axis(1));

    let mut transition_hat = Array3::<f64>::zeros((n_states, n_actions, n_states));
    let mut reward_hat = Array2::<f64>::zeros((n_states, n_actions));
    let mut cost_hat = Array2::<f64>::zeros((n_states, n_actions));
    for s in 0..n_states {
        for a in 0..n_actions {
            let n = pair[[s, a]];
            if n > 0.0 {
                for sp in 0..n_states {
                    transition_hat[[s, a, sp]] = counts[[s, a, sp]] / n;
                }
                reward_hat[[s, a]] = reward_sum[[s, a]] / n;
                cost_hat[[s, a]] = cost_sum[[s, a]] / n;
            } else {
                transition_hat.slice_mut(ndarray::s![s, a, ..]).fill(1.0 / n_states as f64);
            }
        }
    }

    let mut pi = Array2::<f64>::zeros((n_states, n_actions));
    for s in 0..n_states {
        let n_s: f64 = pair.row(s).sum();
        if n_s > 0.0 {
            for a in 0..n_actions {
                pi[[s, a]] = pair[[s, a]] / n_s;
            }
        } else {
            pi.row_mut(s).fill(1.0 / n_actions as f64);
        }
    }

    let n_starts = starts.sum();
    let p0_hat = if n_starts > 0.0 {
        starts / n_starts
    } else {
        return Err(Error::param("dataset has no episode-start records"));
    };

    Ok(MleModel {
        schema_version: MDP_SCHEMA_VERSION,
        n_states,
        n_actions,
        gamma,
        transition_hat,
        d_d,
        d_d_state,
        pi_d: TabularPolicy { probs: pi },
        p0_hat,
        support_mask,
        reward_hat,
        cost_hat,
    })
}

impl MleModel {
    /// States with at least one record.
    pub fn state_mask(&self) -> Vec<bool> {
        self.d_d_state.iter().map(|&d| d > 0.0).collect()
    }

    pub fn supported_states(&self) -> Vec<usize> {
        (0..self.n_states).filter(|&s| self.d_d_state[s] > 0.0).collect()
    }

    pub fn is_supported(&self, s: usize, a: usize) -> bool {
        self.support_mask[[s, a]]
    }

    /// The MLE MDP used as evaluation oracle: estimated transitions on
    /// supported states, states without data made absorbing with zero signal
    /// (so flow leaving the data support is lost, as in every solver here).
    pub fn to_mdp(&self, reward: &Array2<f64>, cost: &Array2<f64>) -> Result<TabularMdp> {
        let mut transition = self.transition_hat.clone();
        let mut reward = reward.clone();
        let mut cost = cost.clone();
        for s in 0..self.n_states {
            if self.d_d_state[s] > 0.0 {
                continue;
            }
            for a in 0..self.n_actions {
                let mut row = transition.slice_mut(ndarray::s![s, a, ..]);
                row.fill(0.0);
                row[s] = 1.0;
            }
            reward.row_mut(s).fill(0.0);
            cost.row_mut(s).fill(0.0);
        }
        TabularMdp::new(transition, reward, self.p0_hat.clone(), self.gamma)?.with_cost(cost)
    }

    /// A model with full information: `d_D` is the exact discounted occupancy
    /// of `pi` on `mdp` and `T̂ = T`. No sampling is involved.
    pub fn from_occupancy(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<MleModel> {
        let d_d = super::exact_stationary_distribution(mdp, pi)?;
        let d_d_state = d_d.sum_axis(ndarray::Axis(1));
        let mut pi_d = pi.clone();
        for s in 0..mdp.n_states {
            if d_d_state[s] == 0.0 {
                pi_d.probs.row_mut(s).fill(1.0 / mdp.n_actions as f64);
            }
        }
        Ok(MleModel {
            schema_version: MDP_SCHEMA_VERSION,
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
            gamma: mdp.gamma,
            transition_hat: mdp.transition.clone(),
            support_mask: d_d.mapv(|x| x > 0.0),
            d_d,
            d_d_state,
            pi_d,
            p0_hat: mdp.p0.clone(),
            reward_hat: mdp.reward.clone(),
            cost_hat: mdp.cost.clone(),
        })
    }

    /// [`MleModel::to_mdp`] with the empirical reward and cost.
    pub fn empirical_mdp(&self) -> Result<TabularMdp> {
        self.to_mdp(&self.reward_hat, &self.cost_hat)
    }
}

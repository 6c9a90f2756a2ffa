// Random benchmark MDP: planning, the exact occupancy oracle and a
// Monte-Carlo cross-check.

use anyhow::Result;
use tabular_dice::mdp::{
    behavior_policy, exact_policy_value, exact_stationary_distribution, generate_random_mdp, rollout_value,
    value_iteration, Signal,
};

pub fn run_example() -> Result<()> {
    let mdp = generate_random_mdp(7, 30, 4, 4, 0.95)?;
    let vi = value_iteration(&mdp, 1e-12)?;
    println!("goal states {:?}, value iteration converged in {} sweeps", mdp.goal_states(), vi.iterations);

    let behavior = behavior_policy(&mdp, 0.5)?;
    let d = exact_stationary_distribution(&mdp, &behavior)?;
    println!("d_π sums to {:.12}", d.sum());

    for (name, pi) in [("optimal", &vi.policy), ("behaviour", &behavior)] {
        let exact = exact_policy_value(&mdp, pi, Signal::Reward)?;
        let mc = rollout_value(&mdp, pi, Signal::Reward, 20_000, 1)?;
        println!(
            "{name:<9} ρ = {:.5} (raw {:.4}), rollouts {:.5} ± {:.5}",
            exact.normalized, exact.raw, mc.mean, mc.std_error
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

// Collecting trajectories with the behaviour policy and building the
// maximum-likelihood model the solvers work on.

use anyhow::Result;
use tabular_dice::mdp::{behavior_policy, build_mle_model, collect_dataset, generate_random_mdp};

pub fn run_example() -> Result<()> {
    let mdp = generate_random_mdp(3, 30, 4, 4, 0.95)?;
    let pi_d = behavior_policy(&mdp, 0.5)?;
    let data = collect_dataset(&mdp, &pi_d, 30, 100, 1_000_003)?;
    let model = build_mle_model(&data, 30, 4, mdp.gamma)?;

    let pairs = model.support_mask.iter().filter(|&&b| b).count();
    println!(
        "{} transitions, {} of 30 states and {pairs} of 120 pairs observed",
        data.len(),
        model.supported_states().len()
    );

    let mut worst: f64 = 0.0;
    for s in 0..30 {
        for a in 0..4 {
            if model.support_mask[[s, a]] {
                let err: f64 =
                    (0..30).map(|t| (model.transition_hat[[s, a, t]] - mdp.transition[[s, a, t]]).abs()).sum();
                worst = worst.max(err);
            }
        }
    }
    println!("largest L1 transition error on observed pairs: {worst:.3}");

    let empirical = model.empirical_mdp()?;
    println!("empirical MDP start distribution concentrated on {:?}", empirical.p0.iter().position(|&p| p == 1.0));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

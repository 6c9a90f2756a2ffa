// SemiDICE returns a policy correction: Σ_a w(a|s)π_D(a|s) = 1 at every
// observed state, while the Bellman flow constraint is visibly violated.

use anyhow::Result;
use tabular_dice::bench::{build_instance, ExperimentConfig};
use tabular_dice::divergence::{FGenerator, GeneratorKind};
use tabular_dice::metrics::{bellman_flow_violation, policy_correction_sums, sparse_states};
use tabular_dice::solvers::{semidice_solve, OptimizerConfig};

pub fn run_example() -> Result<()> {
    let inst = build_instance(&ExperimentConfig::single_run(), 1, false)?;
    let model = &inst.model;
    let g = FGenerator::new(GeneratorKind::Chi2);
    let corr = semidice_solve(model, &g, &OptimizerConfig::default().with_alpha(0.01), None)?;
    let w = corr.policy_weights()?;

    let sums = policy_correction_sums(w, model);
    let worst = model.supported_states().into_iter().map(|s| (sums[s] - 1.0).abs()).fold(0.0, f64::max);
    println!("max_s |Σ_a w(a|s)π_D(a|s) − 1| = {worst:.2e}");
    println!("Bellman flow violation of w(a|s) = {:.3}", bellman_flow_violation(w, model));
    println!("states with an all-zero correction: {:?}", sparse_states(w, model));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

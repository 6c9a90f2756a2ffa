// Cost-constrained offline RL on one instance: CORSDICE, COptiDICE and the
// naive constrained SemiDICE under a binding budget.

use anyhow::Result;
use tabular_dice::bench::{build_instance, ExperimentConfig};
use tabular_dice::constrained::{
    binding_budget, coptidice_solve, corsdice_solve, naive_constrained_semidice, ConstrainedConfig,
};
use tabular_dice::divergence::{FGenerator, GeneratorKind};
use tabular_dice::solvers::OptimizerConfig;

pub fn run_example() -> Result<()> {
    let inst = build_instance(&ExperimentConfig::constrained(), 4, true)?;
    let model = &inst.model;
    let g = FGenerator::new(GeneratorKind::Chi2);
    let kl = FGenerator::new(GeneratorKind::Kl);
    let opt = OptimizerConfig::default().with_alpha(0.1).with_tol(1e-8);
    let ccfg = ConstrainedConfig::default();

    let (spec, info) = binding_budget(model, &g, &inst.mdp.cost, &opt)?;
    println!(
        "cost of the safest policy {:.4}, unconstrained {:.4}, budget {:.4} (binding: {})",
        info.c_safe, info.c_unconstrained, info.c_tilde, info.binding
    );
    let results = [
        ("CORSDICE", corsdice_solve(model, &g, &kl, &spec, &opt, &ccfg)?),
        ("COptiDICE", coptidice_solve(model, &g, &spec, &opt, &ccfg)?),
        ("naive", naive_constrained_semidice(model, &g, &spec, &opt, &ccfg)?),
    ];
    for (name, r) in &results {
        println!(
            "{name:<9} λ={:<8.3} estimated cost {:.4}  exact cost {:.4}  return {:.4}  feasible {}",
            r.lambda_cost, r.estimated_cost, r.exact_cost, r.exact_return, r.feasible
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

// f-DVL, ODICE, SQL and XQL side by side. f-DVL's correction sums to
// (1 − β)/β per state; XQL's value is a log-sum-exp.

use anyhow::Result;
use tabular_dice::bench::{build_instance, ExperimentConfig};
use tabular_dice::divergence::{FGenerator, GeneratorKind};
use tabular_dice::metrics::{bellman_flow_violation, policy_correction_sums};
use tabular_dice::solvers::{fdvl_solve, odice_solve, sql_solve, xql_solve, OptimizerConfig};

pub fn run_example() -> Result<()> {
    let inst = build_instance(&ExperimentConfig::single_run(), 2, false)?;
    let model = &inst.model;
    let chi2 = FGenerator::new(GeneratorKind::Chi2);
    let cfg = OptimizerConfig::default();
    let observed = model.supported_states();

    for beta in [0.1, 0.5, 0.9] {
        let corr = fdvl_solve(model, &chi2, beta, &cfg)?;
        let sums = policy_correction_sums(corr.policy_weights()?, model);
        let mean = observed.iter().map(|&s| sums[s]).sum::<f64>() / observed.len() as f64;
        println!("f-DVL β={beta}: mean Σ_a wπ_D = {mean:.6}, (1−β)/β = {:.6}", (1.0 - beta) / beta);
    }

    let odice = odice_solve(model, &chi2, 0.7, 1.0, &OptimizerConfig { max_iters: 20_000, ..cfg })?;
    println!(
        "ODICE β=0.7: converged {}, viol_bf {:.3}",
        odice.diagnostics.converged,
        bellman_flow_violation(&odice.effective_w_sa()?, model)
    );

    let sql = sql_solve(model, 0.1, &cfg)?;
    println!("SQL α=0.1: viol_bf {:.3}", bellman_flow_violation(sql.policy_weights()?, model));

    let alpha = 0.5;
    let xql = xql_solve(model, alpha, &cfg)?;
    let q = xql.q.as_ref().expect("XQL keeps Q");
    let s = observed[0];
    let lse = alpha
        * (0..model.n_actions)
            .filter(|&a| model.support_mask[[s, a]])
            .map(|a| model.pi_d.probs[[s, a]] * (q[[s, a]] / alpha).exp())
            .sum::<f64>()
            .ln();
    println!("XQL α={alpha}: V({s}) = {:.10}, log-sum-exp = {lse:.10}", xql.nu[s]);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

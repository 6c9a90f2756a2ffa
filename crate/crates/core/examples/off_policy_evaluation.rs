// Off-policy evaluation of a SemiDICE policy with the raw policy correction
// and with the extracted w(s)·w(a|s).

use anyhow::Result;
use tabular_dice::bench::{run_ope_compare, ExperimentConfig};

pub fn run_example() -> Result<()> {
    let cfg = ExperimentConfig { n_runs: 10, ..ExperimentConfig::ope_compare() };
    let sweep = run_ope_compare(&cfg, false)?;
    for s in &sweep.summary {
        println!(
            "α={:<5} RMSE raw {:.4}  extraction {:.4}  (extraction vs MLE value {:.1e})",
            s.alpha, s.rmse_raw, s.rmse_extraction, s.rmse_extraction_vs_mle
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

// A miniature hyperparameter sweep written to CSV and rendered to SVG.

use anyhow::Result;
use tabular_dice::bench::{emit_plots, run_fig1_sweep, Algorithm, AlgorithmSpec, ExperimentConfig, PlotKind};

pub fn run_example() -> Result<()> {
    let dir = std::env::temp_dir().join(format!("dicebench-example-{}", std::process::id()));
    let cfg = ExperimentConfig {
        n_runs: 3,
        algorithms: vec![
            AlgorithmSpec::standard(Algorithm::Optidice),
            AlgorithmSpec::standard(Algorithm::Semidice),
            AlgorithmSpec::standard(Algorithm::Extraction),
        ],
        output_dir: dir.clone(),
        record_timing: false,
        ..ExperimentConfig::fig1()
    };
    print!("{}", cfg.plan());
    let sweep = run_fig1_sweep(&cfg, true)?;
    for c in &sweep.cells {
        println!(
            "{:<10} α={:<7} return {:.3}  viol_bf {:.1e}",
            c.algorithm, c.param_value, c.exact_return_mean, c.viol_bf_mean
        );
    }
    let csv = sweep.csv_path.expect("written");
    for svg in emit_plots(&csv, PlotKind::Fig1, &dir)? {
        println!("wrote {}", svg.display());
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

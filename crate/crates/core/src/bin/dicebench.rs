use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tabular_dice::bench::{
    build_instance, emit_plots, run_constrained, run_fig1_sweep, run_ope_compare, solve_algorithm, Algorithm,
    Experiment, ExperimentConfig, Instance, PlotKind, WORKERS_ENV,
};
use tabular_dice::divergence::{FGenerator, GeneratorKind};
use tabular_dice::extraction::{attach_state_correction, extract_bias_reduced, extract_direct, Sampling};
use tabular_dice::mdp::exact_signal_value;
use tabular_dice::metrics::{bellman_flow_violation, ope_estimate, policy_correction_violation};
use tabular_dice::solvers::{extract_tabular_policy, CorrectionSet, OptimizerConfig};

#[derive(Parser)]
#[command(name = "dicebench", version, about = "Tabular DICE benchmarks on random finite MDPs")]
#[command(after_help = "Worker count: set DICEBENCH_WORKERS (defaults to the available cores).")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one seeded instance (MDP, behaviour policy, dataset, MLE model) as JSON.
    GenMdp(GenMdpArgs),
    /// Run one solver on an instance and write its correction as JSON.
    Solve(SolveArgs),
    /// Recover w(s) from a policy correction written by `solve`.
    Extract(ExtractArgs),
    /// Hyperparameter sweep over all algorithms (return and violation curves).
    Fig1(SweepArgs),
    /// Off-policy evaluation with raw vs extracted corrections.
    Ope(SweepArgs),
    /// Constrained offline RL: CORSDICE, COptiDICE and naive SemiDICE.
    Constrained(SweepArgs),
    /// Render SVG panels from a sweep CSV.
    Plot(PlotArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    actions: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self, experiment: Experiment) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                ExperimentConfig::from_json_file(path).with_context(|| format!("reading {}", path.display()))?
            }
            None => ExperimentConfig::preset(experiment),
        };
        if let Some(v) = self.runs {
            cfg.n_runs = v;
        }
        if let Some(v) = self.seed {
            cfg.base_seed = v;
        }
        if let Some(v) = self.states {
            cfg.mdp.n_states = v;
        }
        if let Some(v) = self.actions {
            cfg.mdp.n_actions = v;
        }
        if let Some(v) = self.gamma {
            cfg.mdp.gamma = v;
        }
        if let Some(v) = self.trajectories {
            cfg.data.n_trajectories = v;
        }
        if let Some(v) = self.horizon {
            cfg.data.horizon = v;
        }
        if let Some(v) = self.tol {
            cfg.solver.tol = v;
        }
        if let Some(v) = self.max_iters {
            cfg.solver.max_iters = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for CSV/JSON (and SVGs with --plot).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write 0 into wall_ms so outputs are byte-reproducible.
    #[arg(long)]
    no_timing: bool,
    /// Render the SVG panels after the sweep.
    #[arg(long)]
    plot: bool,
    /// Print the resolved plan and exit.
    #[arg(long)]
    dry_run: bool,
    /// Exit non-zero when any result is flagged.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct GenMdpArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run index within the config's seed stream.
    #[arg(long, default_value_t = 0)]
    run: usize,
    /// Attach random state costs.
    #[arg(long)]
    costs: bool,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct SolveArgs {
    /// Instance JSON from `gen-mdp`.
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_parser = parse_algorithm)]
    algorithm: Algorithm,
    /// α (or β for f-DVL/ODICE/SQL/XQL).
    #[arg(long)]
    param: f64,
    /// Defaults to the algorithm's own generator.
    #[arg(long, value_parser = parse_generator)]
    generator: Option<GeneratorKind>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExtractMode {
    Direct,
    BiasReduced,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Correction JSON from `solve` with a policy correction w(a|s).
    #[arg(long)]
    correction: PathBuf,
    #[arg(long, value_enum, default_value_t = ExtractMode::Direct)]
    mode: ExtractMode,
    /// Sampled transitions for bias-reduced mode; exact expectations when unset.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
    #[arg(long, value_parser = parse_generator, default_value = "kl")]
    generator: GeneratorKind,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// CSV written by fig1, ope or constrained.
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, value_parser = parse_plot_kind)]
    kind: PlotKind,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    s.parse().map_err(|e: tabular_dice::Error| e.to_string())
}

fn parse_generator(s: &str) -> std::result::Result<GeneratorKind, String> {
    s.parse().map_err(|e: tabular_dice::Error| e.to_string())
}

fn parse_plot_kind(s: &str) -> std::result::Result<PlotKind, String> {
    s.parse().map_err(|e: tabular_dice::Error| e.to_string())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn gen_mdp(args: GenMdpArgs) -> Result<usize> {
    let cfg = args.config.resolve(Experiment::SingleRun)?;
    if args.dry_run {
        print!("{}", cfg.plan());
        return Ok(0);
    }
    let inst = build_instance(&cfg, args.run, args.costs)?;
    write_json(&args.out, &inst)?;
    println!(
        "instance run {} → {}: {} transitions, {}/{} states supported",
        args.run,
        args.out.display(),
        inst.dataset.len(),
        inst.model.supported_states().len(),
        inst.model.n_states
    );
    Ok(0)
}

fn solve(args: SolveArgs) -> Result<usize> {
    let inst: Instance = read_json(&args.instance)?;
    let cfg = args.config.resolve(Experiment::SingleRun)?;
    let generator = args.generator.unwrap_or(args.algorithm.default_generator());
    let corr = solve_algorithm(&inst.model, args.algorithm, generator, args.param, &cfg.solver)?;
    write_json(&args.out, &corr)?;
    let w = corr.effective_w_sa()?;
    let policy = extract_tabular_policy(&corr, &inst.model)?.policy;
    let ret = exact_signal_value(&inst.mdp, &policy, &inst.mdp.reward)?.normalized;
    println!("{} ({generator}) {}={}", args.algorithm, args.algorithm.param_name(), args.param);
    println!("  converged      {} after {} iterations", corr.diagnostics.converged, corr.diagnostics.iterations);
    println!("  exact return   {ret:.6}");
    println!("  viol_bf        {:.3e}", bellman_flow_violation(&w, &inst.model));
    println!("  viol_pc        {:.3e}", policy_correction_violation(corr.policy_weights()?, &inst.model));
    println!("  ope reward     {:.6}", ope_estimate(&w, &inst.model, &inst.model.reward_hat));
    Ok(usize::from(!corr.diagnostics.converged))
}

fn extract(args: ExtractArgs) -> Result<usize> {
    let inst: Instance = read_json(&args.instance)?;
    let corr: CorrectionSet = read_json(&args.correction)?;
    let w = corr.policy_weights()?;
    let g = FGenerator::new(args.generator);
    let opt = OptimizerConfig::default().with_tol(args.tol);
    let res = match args.mode {
        ExtractMode::Direct => extract_direct(&inst.model, w, &g, &opt)?,
        ExtractMode::BiasReduced => {
            let sampling = match args.samples {
                Some(n) => Sampling::Samples { n, seed: args.sample_seed },
                None => Sampling::Exact,
            };
            extract_bias_reduced(&inst.model, w, &g, &opt, sampling)?
        }
    };
    let combined = attach_state_correction(&corr, &res);
    write_json(&args.out, &combined)?;
    println!("extraction ({}) converged {} after {} iterations", g.name(), res.converged, res.iterations);
    println!("  viol_bf        {:.3e}", res.viol_bellman_flow);
    println!("  ope reward     {:.6}", ope_estimate(&combined.effective_w_sa()?, &inst.model, &inst.model.reward_hat));
    if let Some(gap) = res.sample_gap {
        println!("  sample gap     {gap:.3e}");
    }
    Ok(usize::from(!res.converged))
}

fn sweep(args: SweepArgs, experiment: Experiment) -> Result<usize> {
    let mut cfg = args.config.resolve(experiment)?;
    cfg.experiment = experiment;
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    if args.no_timing {
        cfg.record_timing = false;
    }
    if args.dry_run {
        print!("{}", cfg.plan());
        println!("output → {}", cfg.output_dir.display());
        return Ok(0);
    }
    let (failures, csv, kind) = match experiment {
        Experiment::Fig1Sweep | Experiment::SingleRun => {
            let s = run_fig1_sweep(&cfg, true)?;
            for c in &s.cells {
                println!(
                    "{:<10} {:<6} {}={:<6} return {:>8.4}  viol_bf {:>9.2e}  viol_pc {:>9.2e}",
                    c.algorithm,
                    c.generator,
                    c.param_name,
                    c.param_value,
                    c.exact_return_mean,
                    c.viol_bf_mean,
                    c.viol_pc_mean
                );
            }
            (s.rows.iter().filter(|r| !r.converged).count(), s.csv_path, PlotKind::Fig1)
        }
        Experiment::OpeCompare => {
            let s = run_ope_compare(&cfg, true)?;
            for r in &s.summary {
                println!(
                    "α={:<6} RMSE raw {:.4}  extraction {:.4}  dataset {:.4}  (ρ range {:.4})",
                    r.alpha, r.rmse_raw, r.rmse_extraction, r.rmse_behavior, r.rho_range
                );
            }
            (s.failures + s.rows.iter().filter(|r| !r.converged).count(), s.csv_path, PlotKind::Ope)
        }
        Experiment::Constrained => {
            let s = run_constrained(&cfg, true)?;
            for r in &s.summary {
                println!(
                    "{:<14} binding {:>4}  feasible {:>6.1}%  median |ĉ − c| {:.2e}  return {:.4}",
                    r.algorithm,
                    r.binding_runs,
                    100.0 * r.feasible_rate,
                    r.median_cost_gap,
                    r.mean_return_feasible
                );
            }
            (s.failures + s.rows.iter().filter(|r| !r.converged).count(), s.csv_path, PlotKind::Constrained)
        }
    };
    if let Some(csv) = csv {
        println!("wrote {}", csv.display());
        if args.plot {
            for f in emit_plots(&csv, kind, &cfg.output_dir)? {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(failures)
}

fn plot(args: PlotArgs) -> Result<usize> {
    for f in emit_plots(&args.csv, args.kind, &args.out)? {
        println!("wrote {}", f.display());
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let strict = matches!(&cli.command, Command::Fig1(a) | Command::Ope(a) | Command::Constrained(a) if a.strict);
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        if v.parse::<usize>().map_or(true, |n| n == 0) {
            eprintln!("error: {WORKERS_ENV} must be a positive integer, got '{v}'");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::GenMdp(a) => gen_mdp(a),
        Command::Solve(a) => solve(a),
        Command::Extract(a) => extract(a),
        Command::Fig1(a) => sweep(a, Experiment::Fig1Sweep),
        Command::Ope(a) => sweep(a, Experiment::OpeCompare),
        Command::Constrained(a) => sweep(a, Experiment::Constrained),
        Command::Plot(a) => plot(a),
    };
    match outcome {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("warning: {n} flagged result(s) (failed or not converged)");
            if strict {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

use std::path::Path;

use tabular_dice::bench::{
    emit_plots, read_csv, run_constrained, run_fig1_sweep, run_ope_compare, Algorithm, AlgorithmSpec, ExperimentConfig,
    Fig1Row, PlotKind, SolverParams,
};
use tabular_dice::divergence::GeneratorKind;
use tabular_dice::metrics::ope_rmse;

const FIG1_HEADER: &str =
    "run,algorithm,generator,param_name,param_value,exact_return,viol_bf,viol_pc,ope_reward,ope_cost,lambda,feasible,converged,wall_ms";

fn close(a: &str, b: &str) -> bool {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) if x.is_nan() && y.is_nan() => true,
        (Ok(x), Ok(y)) => (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs())),
        _ => a == b,
    }
}

#[test]
fn fig1_csv_matches_golden_miniature() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        n_runs: 2,
        output_dir: dir.path().to_path_buf(),
        record_timing: false,
        ..ExperimentConfig::fig1()
    };
    let sweep = run_fig1_sweep(&cfg, true).unwrap();
    let got = std::fs::read_to_string(sweep.csv_path.unwrap()).unwrap();
    let want =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/fig1_mini.csv")).unwrap();

    let (got_lines, want_lines): (Vec<&str>, Vec<&str>) = (got.lines().collect(), want.lines().collect());
    assert_eq!(got_lines[0], FIG1_HEADER);
    assert_eq!(want_lines[0], FIG1_HEADER);
    assert_eq!(got_lines.len(), want_lines.len());
    for (i, (g, w)) in got_lines.iter().zip(&want_lines).enumerate().skip(1) {
        let (gf, wf): (Vec<&str>, Vec<&str>) = (g.split(',').collect(), w.split(',').collect());
        assert_eq!(gf.len(), wf.len(), "line {}", i + 1);
        for (col, (x, y)) in gf.iter().zip(&wf).enumerate() {
            assert!(close(x, y), "line {} column {}: {x} vs {y}", i + 1, col);
        }
    }
}

#[test]
fn rereading_the_csv_gives_the_same_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        n_runs: 2,
        algorithms: vec![AlgorithmSpec::standard(Algorithm::Semidice), AlgorithmSpec::standard(Algorithm::Fdvl)],
        output_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::fig1()
    };
    let sweep = run_fig1_sweep(&cfg, true).unwrap();
    let cols: Vec<&str> = FIG1_HEADER.split(',').collect();
    let back: Vec<Fig1Row> = read_csv(sweep.csv_path.as_ref().unwrap(), &cols).unwrap();
    assert_eq!(back, sweep.rows);
}

#[test]
fn diverging_cell_is_flagged_and_sweep_completes() {
    let cfg = ExperimentConfig {
        n_runs: 2,
        algorithms: vec![
            AlgorithmSpec { algorithm: Algorithm::Odice, generator: GeneratorKind::Chi2, grid: vec![0.5] },
            AlgorithmSpec { algorithm: Algorithm::Semidice, generator: GeneratorKind::Chi2, grid: vec![0.01] },
        ],
        solver: SolverParams { odice_step_size: 1e9, odice_max_iters: 200, ..SolverParams::default() },
        ..ExperimentConfig::fig1()
    };
    let sweep = run_fig1_sweep(&cfg, false).unwrap();
    assert_eq!(sweep.rows.len(), 4);
    for r in &sweep.rows {
        assert_eq!(r.converged, r.algorithm == "SemiDICE", "{r:?}");
    }
    let odice = sweep.cells.iter().find(|c| c.algorithm == "ODICE").unwrap();
    assert_eq!(odice.not_converged + odice.failed, 2);
}

#[test]
fn ope_summary_recomputes_from_rows() {
    let cfg = ExperimentConfig { n_runs: 4, ..ExperimentConfig::ope_compare() };
    let sweep = run_ope_compare(&cfg, false).unwrap();
    for s in &sweep.summary {
        let rows: Vec<_> = sweep.rows.iter().filter(|r| r.alpha == s.alpha).collect();
        let ext = ope_rmse(&rows.iter().map(|r| (r.extraction_estimate, r.exact_rho)).collect::<Vec<_>>()).unwrap();
        assert_eq!(ext, s.rmse_extraction);
        // the unweighted control depends only on the data
        let mean_gap = (rows.iter().map(|r| (r.behavior_estimate - r.behavior_rho).powi(2)).sum::<f64>()
            / rows.len() as f64)
            .sqrt();
        assert!((mean_gap - s.rmse_behavior).abs() < 1e-15);
    }
}

fn assert_wellformed_svg(path: &Path) {
    let text = std::fs::read_to_string(path).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(doc.root_element().tag_name().name(), "svg");
}

#[test]
fn every_plot_kind_emits_wellformed_svg() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let fig1 = ExperimentConfig { n_runs: 2, output_dir: out.to_path_buf(), ..ExperimentConfig::fig1() };
    let ope = ExperimentConfig { n_runs: 3, output_dir: out.to_path_buf(), ..ExperimentConfig::ope_compare() };
    let con = ExperimentConfig { n_runs: 2, output_dir: out.to_path_buf(), ..ExperimentConfig::constrained() };
    let mut svgs = Vec::new();
    svgs.extend(emit_plots(&run_fig1_sweep(&fig1, true).unwrap().csv_path.unwrap(), PlotKind::Fig1, out).unwrap());
    svgs.extend(emit_plots(&run_ope_compare(&ope, true).unwrap().csv_path.unwrap(), PlotKind::Ope, out).unwrap());
    svgs.extend(
        emit_plots(&run_constrained(&con, true).unwrap().csv_path.unwrap(), PlotKind::Constrained, out).unwrap(),
    );
    assert_eq!(svgs.len(), 5);
    let names: Vec<String> = svgs.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(&names[..3], ["fig1_return.svg", "fig1_viol_bf.svg", "fig1_viol_pc.svg"]);
    for p in &svgs {
        assert_wellformed_svg(p);
    }
}

#[test]
fn headered_empty_csvs_plot_empty_axes() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (PlotKind::Fig1, FIG1_HEADER.to_string()),
        (PlotKind::Ope, tabular_dice::bench::OPE_COLUMNS.join(",")),
        (PlotKind::Constrained, tabular_dice::bench::CONSTRAINED_COLUMNS.join(",")),
    ];
    for (i, (kind, header)) in cases.into_iter().enumerate() {
        let csv = dir.path().join(format!("empty{i}.csv"));
        std::fs::write(&csv, header + "\n").unwrap();
        for svg in emit_plots(&csv, kind, dir.path()).unwrap() {
            assert_wellformed_svg(&svg);
        }
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use plotters::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::constrained_sweep::{ConstrainedRow, CONSTRAINED_ALGORITHMS, CONSTRAINED_COLUMNS};
use super::fig1::{Fig1Row, FIG1_COLUMNS};
use super::mean_std;
use super::ope::{OpeRow, OPE_COLUMNS};
use crate::error::{Error, Result};
use crate::metrics::ope_rmse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Fig1,
    Ope,
    Constrained,
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig1" => Ok(PlotKind::Fig1),
            "ope" => Ok(PlotKind::Ope),
            "constrained" => Ok(PlotKind::Constrained),
            _ => Err(Error::param(format!("unknown plot kind '{s}' (fig1, ope, constrained)"))),
        }
    }
}

impl PlotKind {
    fn columns(self) -> &'static [&'static str] {
        match self {
            PlotKind::Fig1 => &FIG1_COLUMNS,
            PlotKind::Ope => &OPE_COLUMNS,
            PlotKind::Constrained => &CONSTRAINED_COLUMNS,
        }
    }
}

/// Reads typed rows, checking the header against `columns`. Errors carry the
/// 1-based line number.
pub fn read_csv<T: DeserializeOwned>(path: &Path, columns: &[&str]) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = reader.headers().map_err(|e| parse_error(&e, 1))?.clone();
    if header.iter().collect::<Vec<_>>() != columns {
        return Err(Error::CsvParse {
            line: 1,
            reason: format!("expected columns {columns:?}, found {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<T>().enumerate() {
        rows.push(rec.map_err(|e| parse_error(&e, i as u64 + 2))?);
    }
    Ok(rows)
}

fn parse_error(e: &csv::Error, fallback: u64) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback);
    Error::CsvParse { line, reason: e.to_string() }
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

const WIDTH: u32 = 720;
const HEIGHT: u32 = 480;
const VIOLATION_FLOOR: f64 = 1e-12;

fn color(i: usize) -> RGBColor {
    const PALETTE: [RGBColor; 8] = [
        RGBColor(31, 119, 180),
        RGBColor(255, 127, 14),
        RGBColor(44, 160, 44),
        RGBColor(214, 39, 40),
        RGBColor(148, 103, 189),
        RGBColor(140, 86, 75),
        RGBColor(227, 119, 194),
        RGBColor(23, 190, 207),
    ];
    PALETTE[i % PALETTE.len()]
}

type Series = Vec<(String, Vec<(f64, f64)>)>;

fn bounds(series: &Series, default: (f64, f64), positive: bool) -> (f64, f64) {
    let ys =
        series.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.1)).filter(|y| y.is_finite() && (!positive || *y > 0.0));
    let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
    if !lo.is_finite() {
        return default;
    }
    if positive {
        (lo / 2.0, hi * 2.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// A line chart with a log-scale x axis; `log_y` switches the y axis too.
fn line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &Series, log_y: bool) -> Result<()> {
    let root = SVGBackend::new(path, (WIDTH, HEIGHT)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let xs = series.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.0)).filter(|x| *x > 0.0);
    let (xlo, xhi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let (xlo, xhi) = if xlo.is_finite() { (xlo / 2.0, xhi * 2.0) } else { (1e-4, 10.0) };
    let mut builder = ChartBuilder::on(&root);
    builder.caption(title, ("sans-serif", 20)).margin(12).x_label_area_size(40).y_label_area_size(70);

    macro_rules! draw {
        ($chart:expr) => {{
            let mut chart = $chart;
            chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(plot_err)?;
            for (i, (name, pts)) in series.iter().enumerate() {
                let c = color(i);
                let pts: Vec<(f64, f64)> = pts.iter().copied().filter(|p| p.1.is_finite()).collect();
                chart
                    .draw_series(LineSeries::new(pts.clone(), c.stroke_width(2)))
                    .map_err(plot_err)?
                    .label(name.as_str())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], c.stroke_width(2)));
                chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, c.filled()))).map_err(plot_err)?;
            }
            if !series.is_empty() {
                chart
                    .configure_series_labels()
                    .background_style(WHITE.mix(0.8))
                    .border_style(BLACK)
                    .draw()
                    .map_err(plot_err)?;
            }
        }};
    }

    if log_y {
        let (ylo, yhi) = bounds(series, (VIOLATION_FLOOR, 1.0), true);
        draw!(builder.build_cartesian_2d((xlo..xhi).log_scale(), (ylo..yhi).log_scale()).map_err(plot_err)?);
    } else {
        let (ylo, yhi) = bounds(series, (0.0, 1.0), false);
        draw!(builder.build_cartesian_2d((xlo..xhi).log_scale(), ylo..yhi).map_err(plot_err)?);
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

fn fig1_series(rows: &[Fig1Row], metric: fn(&Fig1Row) -> f64, floor: bool) -> Series {
    let mut groups: Vec<(String, BTreeMap<u64, Vec<f64>>)> = Vec::new();
    for r in rows {
        let name = format!("{} ({})", r.algorithm, r.param_name);
        let idx = match groups.iter().position(|(n, _)| *n == name) {
            Some(i) => i,
            None => {
                groups.push((name, BTreeMap::new()));
                groups.len() - 1
            }
        };
        groups[idx].1.entry(r.param_value.to_bits()).or_default().push(metric(r));
    }
    groups
        .into_iter()
        .map(|(name, by_param)| {
            let mut pts: Vec<(f64, f64)> = by_param
                .into_iter()
                .map(|(bits, v)| {
                    let m = mean_std(v).0;
                    (f64::from_bits(bits), if floor { m.max(VIOLATION_FLOOR) } else { m })
                })
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (name, pts)
        })
        .collect()
}

fn ope_series(rows: &[OpeRow]) -> Result<Series> {
    let mut alphas: Vec<f64> = rows.iter().map(|r| r.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let mut out: Series = vec![
        ("raw w(a|s)".into(), vec![]),
        ("extraction w(s)w(a|s)".into(), vec![]),
        ("dataset average vs ρ(π_D)".into(), vec![]),
    ];
    for a in alphas {
        let g: Vec<&OpeRow> = rows.iter().filter(|r| r.alpha == a).collect();
        let pick = |f: &dyn Fn(&OpeRow) -> (f64, f64)| ope_rmse(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
        out[0].1.push((a, pick(&|r| (r.raw_estimate, r.exact_rho))?));
        out[1].1.push((a, pick(&|r| (r.extraction_estimate, r.exact_rho))?));
        out[2].1.push((a, pick(&|r| (r.behavior_estimate, r.behavior_rho))?));
    }
    Ok(out)
}

fn constrained_scatter(path: &Path, rows: &[ConstrainedRow]) -> Result<()> {
    let root = SVGBackend::new(path, (WIDTH, HEIGHT)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let ratio = |x: f64, c: f64| if c > 0.0 { x / c } else { f64::NAN };
    let pts: Vec<(usize, f64, f64)> = rows
        .iter()
        .filter_map(|r| {
            let i = CONSTRAINED_ALGORITHMS.iter().position(|a| *a == r.algorithm)?;
            let p = (i, ratio(r.exact_cost, r.c_tilde), ratio(r.estimated_cost, r.c_tilde));
            (p.1.is_finite() && p.2.is_finite()).then_some(p)
        })
        .collect();
    let hi = pts.iter().fold(2.0f64, |m, p| m.max(p.1).max(p.2)) * 1.05;
    let mut chart = ChartBuilder::on(&root)
        .caption("Cost estimate vs exact cost (÷ budget)", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..hi, 0.0..hi)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("exact cost / budget").y_desc("estimated cost / budget").draw().map_err(plot_err)?;
    chart.draw_series(LineSeries::new(vec![(0.0, 0.0), (hi, hi)], BLACK.mix(0.4))).map_err(plot_err)?;
    chart.draw_series(LineSeries::new(vec![(1.05, 0.0), (1.05, hi)], RED.mix(0.4))).map_err(plot_err)?;
    for (i, name) in CONSTRAINED_ALGORITHMS.iter().enumerate() {
        let c = color(i);
        chart
            .draw_series(pts.iter().filter(|p| p.0 == i).map(|p| Circle::new((p.1, p.2), 3, c.filled())))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| Circle::new((x + 8, y), 4, c.filled()));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// SVG panels for a benchmark CSV: three for `fig1` (return, flow violation,
/// policy-correction violation), one RMSE chart for `ope` and one cost scatter
/// for `constrained`.
pub fn emit_plots(csv_path: &Path, kind: PlotKind, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let columns = kind.columns();
    match kind {
        PlotKind::Fig1 => {
            let rows: Vec<Fig1Row> = read_csv(csv_path, columns)?;
            let panels: [(&str, &str, &str, fn(&Fig1Row) -> f64, bool); 3] = [
                ("fig1_return.svg", "Policy return", "return", |r| r.exact_return, false),
                ("fig1_viol_bf.svg", "Bellman flow violation", "L1 violation", |r| r.viol_bf, true),
                ("fig1_viol_pc.svg", "Policy correction violation", "L1 violation", |r| r.viol_pc, true),
            ];
            let mut out = Vec::new();
            for (file, title, y_label, metric, log_y) in panels {
                let path = out_dir.join(file);
                line_chart(&path, title, "alpha / beta", y_label, &fig1_series(&rows, metric, log_y), log_y)?;
                out.push(path);
            }
            Ok(out)
        }
        PlotKind::Ope => {
            let rows: Vec<OpeRow> = read_csv(csv_path, columns)?;
            let path = out_dir.join("ope_rmse.svg");
            line_chart(&path, "OPE error against the true value", "alpha", "RMSE", &ope_series(&rows)?, false)?;
            Ok(vec![path])
        }
        PlotKind::Constrained => {
            let rows: Vec<ConstrainedRow> = read_csv(csv_path, columns)?;
            let path = out_dir.join("constrained_costs.svg");
            constrained_scatter(&path, &rows)?;
            Ok(vec![path])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn malformed_rows_report_their_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let mut text = FIG1_COLUMNS.join(",") + "\n";
        text += "0,SemiDICE,chi2,alpha,0.01,1,0.1,0,0.5,0,,,true,0\n";
        text += "1,SemiDICE,chi2,alpha,oops,1,0.1,0,0.5,0,,,true,0\n";
        std::fs::write(&path, text).unwrap();
        match read_csv::<Fig1Row>(&path, &FIG1_COLUMNS) {
            Err(Error::CsvParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(emit_plots(&path, PlotKind::Fig1, dir.path()), Err(Error::CsvParse { line: 1, .. })));
    }

    #[test]
    fn empty_csv_gives_empty_panels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        std::fs::write(&path, FIG1_COLUMNS.join(",") + "\n").unwrap();
        let files = emit_plots(&path, PlotKind::Fig1, dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        for f in files {
            assert!(std::fs::read_to_string(f).unwrap().contains("<svg"));
        }
    }
}

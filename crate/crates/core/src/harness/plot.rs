//! Deterministic SVG plots from the emitted CSV files.
//!
//! No timestamps, no randomness: equal inputs give byte-identical SVGs.
//! Three plot kinds are supported, matching the artifact files: excess-risk
//! curves (empirical overlaid on theory), landscape profiles, and escape
//! fractions.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::csvio::CsvData;
use super::HarnessError;
use crate::topology::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    ErCurves,
    Landscape,
    Escape,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 560.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 56.0;

/// Legend and color order is fixed: centralized, diffusion, consensus.
const STRATEGY_ORDER: [Strategy; 3] =
    [Strategy::Centralized, Strategy::Diffusion, Strategy::Consensus];

fn color(i: usize) -> &'static str {
    const PALETTE: [&str; 8] = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
    ];
    PALETTE[i % PALETTE.len()]
}

fn fnum(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_points(points: impl Iterator<Item = (f64, f64)>) -> Option<Frame> {
        let mut frame: Option<Frame> = None;
        for (x, y) in points {
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            let f = frame.get_or_insert(Frame { x_min: x, x_max: x, y_min: y, y_max: y });
            f.x_min = f.x_min.min(x);
            f.x_max = f.x_max.max(x);
            f.y_min = f.y_min.min(y);
            f.y_max = f.y_max.max(y);
        }
        if let Some(f) = &mut frame {
            if f.x_max == f.x_min {
                f.x_max = f.x_min + 1.0;
            }
            if f.y_max == f.y_min {
                f.y_max = f.y_min + 1.0;
            }
            let pad = 0.05 * (f.y_max - f.y_min);
            f.y_min -= pad;
            f.y_max += pad;
        }
        frame
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B
            - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

struct Svg {
    body: String,
}

impl Svg {
    fn new(title: &str) -> Svg {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(body, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            body,
            r#"<text x="{}" y="22" font-family="monospace" font-size="15" text-anchor="middle">{title}</text>"#,
            WIDTH / 2.0
        );
        Svg { body }
    }

    fn axes(&mut self, frame: &Frame, x_label: &str, y_label: &str) {
        let x0 = MARGIN_L;
        let x1 = WIDTH - MARGIN_R;
        let y0 = HEIGHT - MARGIN_B;
        let y1 = MARGIN_T;
        let _ = writeln!(
            self.body,
            r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black" stroke-width="1"/>"#
        );
        let _ = writeln!(
            self.body,
            r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black" stroke-width="1"/>"#
        );
        for i in 0..=4 {
            let fx = frame.x_min + (frame.x_max - frame.x_min) * i as f64 / 4.0;
            let px = frame.sx(fx);
            let _ = writeln!(
                self.body,
                r#"<line x1="{}" y1="{y0}" x2="{}" y2="{}" stroke="black" stroke-width="1"/>"#,
                fnum(px),
                fnum(px),
                y0 + 4.0
            );
            let _ = writeln!(
                self.body,
                r#"<text x="{}" y="{}" font-family="monospace" font-size="11" text-anchor="middle">{}</text>"#,
                fnum(px),
                y0 + 18.0,
                format_tick(fx)
            );
            let fy = frame.y_min + (frame.y_max - frame.y_min) * i as f64 / 4.0;
            let py = frame.sy(fy);
            let _ = writeln!(
                self.body,
                r#"<line x1="{}" y1="{}" x2="{x0}" y2="{}" stroke="black" stroke-width="1"/>"#,
                x0 - 4.0,
                fnum(py),
                fnum(py)
            );
            let _ = writeln!(
                self.body,
                r#"<text x="{}" y="{}" font-family="monospace" font-size="11" text-anchor="end">{}</text>"#,
                x0 - 7.0,
                fnum(py + 4.0),
                format_tick(fy)
            );
        }
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" font-family="monospace" font-size="13" text-anchor="middle">{x_label}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 14.0
        );
        let _ = writeln!(
            self.body,
            r#"<text x="16" y="{}" font-family="monospace" font-size="13" text-anchor="middle" transform="rotate(-90 16 {})">{y_label}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0
        );
    }

    fn empty_axes_note(&mut self) {
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" font-family="monospace" font-size="13" text-anchor="middle">no data</text>"#,
            WIDTH / 2.0,
            HEIGHT / 2.0
        );
    }

    fn polyline(&mut self, frame: &Frame, pts: &[(f64, f64)], stroke: &str, dashed: bool) {
        if pts.is_empty() {
            return;
        }
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{},{}", fnum(frame.sx(x)), fnum(frame.sy(y))))
            .collect();
        let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"{dash}/>"#,
            coords.join(" ")
        );
    }

    fn legend(&mut self, entries: &[(String, &'static str, bool)]) {
        for (i, (label, col, dashed)) in entries.iter().enumerate() {
            let y = MARGIN_T + 14.0 + 18.0 * i as f64;
            let x = MARGIN_L + 12.0;
            let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                self.body,
                r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{col}" stroke-width="1.5"{dash}/>"#,
                x + 26.0
            );
            let _ = writeln!(
                self.body,
                r#"<text x="{}" y="{}" font-family="monospace" font-size="12">{label}</text>"#,
                x + 32.0,
                y + 4.0
            );
        }
    }

    fn finish(mut self) -> String {
        let _ = writeln!(self.body, "</svg>");
        self.body
    }
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Empirical and theoretical excess-risk curves per strategy.
///
/// `trace` must carry `n`, `strategy`, `er_empirical`; `theory` (optional)
/// must carry `n`, `er_cen`, `er_dif`, `er_con`.
pub fn plot_er_curves(trace: &CsvData, theory: Option<&CsvData>) -> Result<String, HarnessError> {
    let n_col = trace.floats("n")?;
    let strat = trace.strings("strategy")?;
    let er = trace.floats("er_empirical")?;
    if let Some(t) = theory {
        t.column("n")?;
        for c in ["er_cen", "er_dif", "er_con"] {
            t.column(c)?;
        }
    }

    let mut series: Vec<(String, &'static str, bool, Vec<(f64, f64)>)> = Vec::new();
    for (i, s) in STRATEGY_ORDER.iter().enumerate() {
        let pts: Vec<(f64, f64)> = n_col
            .iter()
            .zip(&strat)
            .zip(&er)
            .filter(|((_, st), _)| **st == s.name())
            .map(|((n, _), e)| (*n, *e))
            .collect();
        series.push((s.name().to_string(), color(i), false, pts));
    }
    if let Some(t) = theory {
        let tn = t.floats("n")?;
        for (i, (s, colname)) in STRATEGY_ORDER
            .iter()
            .zip(["er_cen", "er_dif", "er_con"])
            .enumerate()
        {
            let vals = t.floats(colname)?;
            let pts: Vec<(f64, f64)> = tn.iter().copied().zip(vals).collect();
            series.push((format!("{} (theory)", s.name()), color(i), true, pts));
        }
    }

    let mut svg = Svg::new("excess risk vs iteration");
    let frame = Frame::from_points(series.iter().flat_map(|(_, _, _, p)| p.iter().copied()));
    match frame {
        Some(frame) => {
            svg.axes(&frame, "n", "ER_n");
            for (_, col, dashed, pts) in &series {
                svg.polyline(&frame, pts, col, *dashed);
            }
            let entries: Vec<(String, &'static str, bool)> = series
                .iter()
                .filter(|(_, _, _, p)| !p.is_empty())
                .map(|(l, c, d, _)| (l.clone(), *c, *d))
                .collect();
            svg.legend(&entries);
        }
        None => {
            let frame = Frame { x_min: 0.0, x_max: 1.0, y_min: 0.0, y_max: 1.0 };
            svg.axes(&frame, "n", "ER_n");
            svg.empty_axes_note();
        }
    }
    Ok(svg.finish())
}

/// Landscape profiles: one polyline per probe direction.
///
/// Expects columns `dir`, `alpha`, `j`.
pub fn plot_landscape(data: &CsvData) -> Result<String, HarnessError> {
    let dirs = data.floats("dir")?;
    let alphas = data.floats("alpha")?;
    let js = data.floats("j")?;
    let mut svg = Svg::new("risk along norm-matched random directions");
    let frame = Frame::from_points(alphas.iter().copied().zip(js.iter().copied()));
    match frame {
        Some(frame) => {
            svg.axes(&frame, "alpha", "J(w + alpha v)");
            let n_dirs = dirs.iter().fold(0.0f64, |a, &d| a.max(d)) as usize + 1;
            for d in 0..n_dirs {
                let pts: Vec<(f64, f64)> = dirs
                    .iter()
                    .zip(alphas.iter().zip(&js))
                    .filter(|(dd, _)| **dd as usize == d)
                    .map(|(_, (a, j))| (*a, *j))
                    .collect();
                svg.polyline(&frame, &pts, color(d), false);
            }
        }
        None => {
            let frame = Frame { x_min: -1.0, x_max: 1.0, y_min: 0.0, y_max: 1.0 };
            svg.axes(&frame, "alpha", "J(w + alpha v)");
            svg.empty_axes_note();
        }
    }
    Ok(svg.finish())
}

/// Escaped fraction vs iteration per strategy.
///
/// Expects columns `n`, `strategy`, `escaped_fraction`.
pub fn plot_escape(data: &CsvData) -> Result<String, HarnessError> {
    let n_col = data.floats("n")?;
    let strat = data.strings("strategy")?;
    let frac = data.floats("escaped_fraction")?;
    let mut svg = Svg::new("escaped fraction vs iteration");
    let frame = Frame::from_points(n_col.iter().copied().zip(frac.iter().copied()));
    match frame {
        Some(frame) => {
            svg.axes(&frame, "n", "escaped fraction");
            let mut entries = Vec::new();
            for (i, s) in STRATEGY_ORDER.iter().enumerate() {
                let pts: Vec<(f64, f64)> = n_col
                    .iter()
                    .zip(&strat)
                    .zip(&frac)
                    .filter(|((_, st), _)| **st == s.name())
                    .map(|((n, _), f)| (*n, *f))
                    .collect();
                if !pts.is_empty() {
                    entries.push((s.name().to_string(), color(i), false));
                }
                svg.polyline(&frame, &pts, color(i), false);
            }
            svg.legend(&entries);
        }
        None => {
            let frame = Frame { x_min: 0.0, x_max: 1.0, y_min: 0.0, y_max: 1.0 };
            svg.axes(&frame, "n", "escaped fraction");
            svg.empty_axes_note();
        }
    }
    Ok(svg.finish())
}

/// Render one plot kind from input CSVs to an SVG file.
pub fn plot_to_file(
    kind: PlotKind,
    inputs: &[&Path],
    out: &Path,
) -> Result<(), HarnessError> {
    let svg = match kind {
        PlotKind::ErCurves => {
            let trace = CsvData::read(inputs[0])?;
            let theory = match inputs.get(1) {
                Some(p) => Some(CsvData::read(p)?),
                None => None,
            };
            plot_er_curves(&trace, theory.as_ref())?
        }
        PlotKind::Landscape => plot_landscape(&CsvData::read(inputs[0])?)?,
        PlotKind::Escape => plot_escape(&CsvData::read(inputs[0])?)?,
    };
    std::fs::write(out, svg).map_err(|e| HarnessError::Io(out.display().to_string(), e))
}

//! Report serialization and small SVG summaries.
//!
//! Reports are emitted with keys in sorted order and floats printed with
//! nine significant digits, so a given analysis produces the same bytes on
//! every run and golden files stay stable. The SVG renderers draw straight
//! from already-computed results and never recompute any metric.

use std::fmt::Write as _;

use crate::barrier::{BtEReport, CategoryReport};
use crate::error::{BteError, Result};
use crate::preference::{PreferenceSeries, ThresholdSeries};

/// Prints a finite float with nine significant digits in exponent form,
/// e.g. `2.50000000e0`. Negative zero collapses to plain zero so equal
/// values always print the same bytes.
pub fn fmt_f64(value: f64) -> String {
    debug_assert!(value.is_finite(), "reports only carry finite values");
    if value == 0.0 {
        return "0.00000000e0".to_string();
    }
    format!("{value:.8e}")
}

fn push_json_string(out: &mut String, s: &str) {
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

fn push_opt_f64(out: &mut String, value: Option<f64>) {
    match value {
        Some(v) => out.push_str(&fmt_f64(v)),
        None => out.push_str("null"),
    }
}

/// Output encodings for a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Serializes a report. JSON keys come out in sorted order; CSV flattens to
/// one row per window, with a single mostly-empty row for categories that
/// never produced an exit so they stay visible in the table.
pub fn emit_bte_report(report: &BtEReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(emit_json(report)),
        ReportFormat::Csv => emit_csv(report),
    }
}

fn emit_json(report: &BtEReport) -> String {
    let mut out = String::new();
    out.push_str("{\"categories\":[");
    for (n, cat) in report.categories.iter().enumerate() {
        if n > 0 {
            out.push(',');
        }
        out.push_str("{\"category_bte\":");
        push_opt_f64(&mut out, cat.category_bte);
        out.push_str(",\"label\":");
        push_json_string(&mut out, &cat.label);
        out.push_str(",\"windows\":[");
        for (m, w) in cat.windows.iter().enumerate() {
            if m > 0 {
                out.push(',');
            }
            let _ = write!(
                out,
                "{{\"bte\":{},\"t_x\":{},\"t_y\":{}}}",
                fmt_f64(w.bte),
                w.t_x,
                w.t_y
            );
        }
        out.push_str("]}");
    }
    let _ = write!(
        out,
        "],\"config\":{{\"binning\":{binning},\"k\":{k},\"mode\":{mode},\"nu\":{nu}}}",
        binning = {
            let mut s = String::new();
            push_json_string(&mut s, &report.config.binning);
            s
        },
        k = fmt_f64(report.config.k),
        mode = {
            let mut s = String::new();
            push_json_string(&mut s, &report.config.mode);
            s
        },
        nu = report.config.nu,
    );
    out.push_str(",\"system_bte\":");
    push_opt_f64(&mut out, report.system_bte);
    let _ = write!(out, ",\"user_id\":{}}}", report.user_id);
    out
}

fn emit_csv(report: &BtEReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "user_id",
        "category",
        "t_x",
        "t_y",
        "window_bte",
        "category_bte",
        "system_bte",
    ])?;
    let user = report.user_id.to_string();
    let system = report.system_bte.map(fmt_f64).unwrap_or_default();
    for cat in &report.categories {
        let score = cat.category_bte.map(fmt_f64).unwrap_or_default();
        if cat.windows.is_empty() {
            w.write_record([&user, &cat.label, "", "", "", &score, &system])?;
        } else {
            for win in &cat.windows {
                w.write_record([
                    &user,
                    &cat.label,
                    &win.t_x.to_string(),
                    &win.t_y.to_string(),
                    &fmt_f64(win.bte),
                    &score,
                    &system,
                ])?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| BteError::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| BteError::Data(e.to_string()))
}

/// Parses a JSON report back into memory.
pub fn parse_bte_report(text: &str) -> Result<BtEReport> {
    Ok(serde_json::from_str(text)?)
}

/// Which categories a plot should include.
#[derive(Debug, Clone, PartialEq)]
pub enum CategorySelection {
    /// These labels, in the given order; unknown labels are skipped and
    /// reported back.
    Explicit(Vec<String>),
    /// The n categories with the most exit windows, ties broken by report
    /// order.
    Top(usize),
}

/// What to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Ranked bar chart of category scores, one bar per category.
    CategoryBars,
    /// One panel per category: preference scatter with the threshold band.
    SeriesBands,
}

/// A plot request. `out_path` is where the caller intends to put the bytes;
/// rendering itself never touches the filesystem.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub user_id: u64,
    pub kind: PlotKind,
    pub selection: CategorySelection,
    pub out_path: std::path::PathBuf,
    pub width: u32,
    pub height: u32,
}

/// A finished plot plus any labels that could not be drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPlot {
    pub svg: String,
    pub skipped: Vec<String>,
}

fn select_categories<'a>(
    report: &'a BtEReport,
    selection: &CategorySelection,
) -> (Vec<&'a CategoryReport>, Vec<String>) {
    match selection {
        CategorySelection::Explicit(labels) => {
            let mut chosen = Vec::new();
            let mut skipped = Vec::new();
            for label in labels {
                match report.categories.iter().find(|c| &c.label == label) {
                    Some(cat) => chosen.push(cat),
                    None => skipped.push(label.clone()),
                }
            }
            (chosen, skipped)
        }
        CategorySelection::Top(n) => {
            let mut ranked: Vec<&CategoryReport> = report.categories.iter().collect();
            ranked.sort_by_key(|c| std::cmp::Reverse(c.window_count()));
            ranked.truncate(*n);
            (ranked, Vec::new())
        }
    }
}

/// Renders a plot from finished results. `SeriesBands` additionally needs
/// the preference series and its thresholds; passing `None` there is a
/// config error. The SVG is plain shapes plus `data-` attributes carrying
/// the exact numbers the geometry was derived from.
pub fn render_plot(
    spec: &PlotSpec,
    report: &BtEReport,
    series: Option<(&PreferenceSeries, &ThresholdSeries)>,
) -> Result<RenderedPlot> {
    if spec.width < 100 || spec.height < 80 {
        return Err(BteError::Config(format!(
            "plot size {}x{} is too small to draw",
            spec.width, spec.height
        )));
    }
    let (chosen, skipped) = select_categories(report, &spec.selection);
    let svg = match spec.kind {
        PlotKind::CategoryBars => render_bars(spec, report, &chosen),
        PlotKind::SeriesBands => {
            let Some((series, thresholds)) = series else {
                return Err(BteError::Config(
                    "series plots need the preference series and thresholds".to_string(),
                ));
            };
            render_bands(spec, series, thresholds, &chosen)?
        }
    };
    Ok(RenderedPlot { svg, skipped })
}

fn svg_open(out: &mut String, width: u32, height: u32, extra_attrs: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\"{extra_attrs}>"
    );
}

fn render_bars(spec: &PlotSpec, report: &BtEReport, chosen: &[&CategoryReport]) -> String {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let (left, right, top, bottom) = (52.0, 12.0, 28.0, 44.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let max = chosen
        .iter()
        .filter_map(|c| c.category_bte)
        .fold(0.0_f64, f64::max);

    let mut out = String::new();
    svg_open(
        &mut out,
        spec.width,
        spec.height,
        &format!(" data-max=\"{}\"", fmt_f64(max)),
    );
    let _ = writeln!(
        out,
        "<text x=\"{left}\" y=\"16\">barrier to exit by category, user {}</text>",
        report.user_id
    );
    let baseline = top + plot_h;
    let _ = writeln!(
        out,
        "<line x1=\"{left}\" y1=\"{baseline:.2}\" x2=\"{:.2}\" y2=\"{baseline:.2}\" stroke=\"black\"/>",
        left + plot_w
    );
    let _ = writeln!(
        out,
        "<text x=\"4\" y=\"{:.2}\">{:.2}</text>",
        top + 10.0,
        max
    );
    if !chosen.is_empty() {
        let slot = plot_w / chosen.len() as f64;
        let bar_w = (slot * 0.7).min(48.0);
        for (n, cat) in chosen.iter().enumerate() {
            let x = left + slot * n as f64 + (slot - bar_w) / 2.0;
            match cat.category_bte {
                Some(score) => {
                    let bar_h = if max > 0.0 { plot_h * score / max } else { 0.0 };
                    let _ = writeln!(
                        out,
                        "<rect class=\"bar\" x=\"{x:.2}\" y=\"{:.2}\" width=\"{bar_w:.2}\" \
                         height=\"{bar_h:.2}\" fill=\"#4878a8\" data-score=\"{}\">\
                         <title>{}: {:.3}</title></rect>",
                        baseline - bar_h,
                        fmt_f64(score),
                        xml_escape(&cat.label),
                        score
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "<text class=\"no-exit\" x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" \
                         fill=\"#888\">no exit</text>",
                        x + bar_w / 2.0,
                        baseline - 6.0
                    );
                }
            }
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
                x + bar_w / 2.0,
                baseline + 14.0,
                xml_escape(&cat.label)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

fn render_bands(
    spec: &PlotSpec,
    series: &PreferenceSeries,
    thresholds: &ThresholdSeries,
    chosen: &[&CategoryReport],
) -> Result<String> {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let panels = chosen.len().max(1);
    let (left, right, top_pad, bottom_pad) = (52.0, 12.0, 22.0, 18.0);
    let panel_h = h / panels as f64;
    let plot_w = w - left - right;
    let plot_h = panel_h - top_pad - bottom_pad;
    let t_len = series.len();

    let mut out = String::new();
    svg_open(
        &mut out,
        spec.width,
        spec.height,
        &format!(" data-panels=\"{}\"", chosen.len()),
    );
    let x_of = |t: usize| -> f64 {
        if t_len <= 1 {
            left + plot_w / 2.0
        } else {
            left + plot_w * t as f64 / (t_len - 1) as f64
        }
    };
    for (p, cat) in chosen.iter().enumerate() {
        let Some(i) = series.categories.iter().position(|l| l == &cat.label) else {
            return Err(BteError::Data(format!(
                "category {:?} is missing from the series",
                cat.label
            )));
        };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for t in 0..t_len {
            lo = lo.min(series.values[t][i]);
            hi = hi.max(series.values[t][i]);
            if let Some(band) = thresholds.band(t) {
                lo = lo.min(band.lower[i]);
                hi = hi.max(band.upper[i]);
            }
        }
        if !lo.is_finite() || !hi.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 1.0;
            hi += 1.0;
        }
        let pad = (hi - lo) * 0.05;
        let (lo, hi) = (lo - pad, hi + pad);
        let panel_top = panel_h * p as f64 + top_pad;
        let y_of = |v: f64| panel_top + plot_h * (1.0 - (v - lo) / (hi - lo));

        let _ = writeln!(
            out,
            "<g class=\"panel\" data-label=\"{}\" data-ymin=\"{}\" data-ymax=\"{}\">",
            xml_escape(&cat.label),
            fmt_f64(lo),
            fmt_f64(hi)
        );
        let _ = writeln!(
            out,
            "<text x=\"{left}\" y=\"{:.2}\">{}</text>",
            panel_top - 8.0,
            xml_escape(&cat.label)
        );
        // Shade the warm-up, where no thresholds exist yet.
        if thresholds.horizon > 0 && t_len > 1 {
            let warm_end = x_of(thresholds.horizon.min(t_len - 1));
            let _ = writeln!(
                out,
                "<rect class=\"warmup\" x=\"{left}\" y=\"{panel_top:.2}\" width=\"{:.2}\" \
                 height=\"{plot_h:.2}\" fill=\"#eee\"/>",
                warm_end - left
            );
        }
        for (name, color, pick) in [("upper", "#b05050", true), ("lower", "#5080b0", false)] {
            let points: Vec<String> = (0..t_len)
                .filter_map(|t| thresholds.band(t).map(|b| (t, b)))
                .map(|(t, b)| {
                    let v = if pick { b.upper[i] } else { b.lower[i] };
                    format!("{:.2},{:.2}", x_of(t), y_of(v))
                })
                .collect();
            if !points.is_empty() {
                let _ = writeln!(
                    out,
                    "<polyline class=\"{name}\" fill=\"none\" stroke=\"{color}\" points=\"{}\"/>",
                    points.join(" ")
                );
            }
        }
        for t in 0..t_len {
            let _ = writeln!(
                out,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"#333\"/>",
                x_of(t),
                y_of(series.values[t][i])
            );
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

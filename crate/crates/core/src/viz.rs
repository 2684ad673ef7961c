//! Canonical JSON export and SVG rendering for every explainer result.
//!
//! Rendering is a pure function of the results and options: no timestamps,
//! no randomness, fixed two-decimal pixel coordinates.

use std::fmt::Write as _;

use serde_json::Value as Json;
use sha2::{Digest, Sha256};

use crate::data::Value;
use crate::error::{Error, Result};
use crate::local_explainers::{Attribution, CpProfile};
use crate::performance::{check_labels, PerformanceResult};
use crate::variable_importance::{variable_order, ImportanceResult};
use crate::variable_response::{MergingPath, ProfileCurve, ProfileKind};

/// Any explainer result.
#[derive(Debug, Clone, PartialEq)]
pub enum Explanation {
    Performance(PerformanceResult),
    Profile(ProfileCurve),
    Cp(CpProfile),
    FactorMerge(MergingPath),
    Importance(ImportanceResult),
    Breakdown(Attribution),
}

impl Explanation {
    pub fn kind(&self) -> &'static str {
        match self {
            Explanation::Performance(_) => "performance",
            Explanation::Profile(c) => match c.kind {
                ProfileKind::Pdp => "pdp",
                ProfileKind::Ale => "ale",
                ProfileKind::Cp => "cp_curve",
            },
            Explanation::Cp(_) => "cp",
            Explanation::FactorMerge(_) => "factor_merge",
            Explanation::Importance(_) => "importance",
            Explanation::Breakdown(_) => "breakdown",
        }
    }

    pub fn label(&self) -> &str {
        match self {
            Explanation::Performance(r) => &r.label,
            Explanation::Profile(r) => &r.label,
            Explanation::Cp(r) => &r.label,
            Explanation::FactorMerge(r) => &r.label,
            Explanation::Importance(r) => &r.label,
            Explanation::Breakdown(r) => &r.label,
        }
    }

    pub fn to_json_value(&self) -> Json {
        let inner = match self {
            Explanation::Performance(r) => serde_json::to_value(r),
            Explanation::Profile(r) => serde_json::to_value(r),
            Explanation::Cp(r) => serde_json::to_value(r),
            Explanation::FactorMerge(r) => serde_json::to_value(r),
            Explanation::Importance(r) => serde_json::to_value(r),
            Explanation::Breakdown(r) => serde_json::to_value(r),
        }
        .expect("results serialise to JSON");
        let Json::Object(mut map) = inner else {
            unreachable!("results serialise to objects")
        };
        map.insert("kind".into(), Json::String(self.kind().into()));
        Json::Object(map)
    }

    pub fn from_json_value(value: Json) -> Result<Self> {
        let kind = value
            .get("kind")
            .and_then(Json::as_str)
            .ok_or_else(|| Error::data("result JSON lacks a \"kind\" field"))?
            .to_string();
        let bad = |e: serde_json::Error| Error::data(format!("invalid {kind} result: {e}"));
        Ok(match kind.as_str() {
            "performance" => Explanation::Performance(serde_json::from_value(value).map_err(bad)?),
            "pdp" | "ale" | "cp_curve" => {
                let mut map = match value {
                    Json::Object(m) => m,
                    _ => unreachable!("has a kind field"),
                };
                let k = if kind == "cp_curve" { "cp" } else { kind.as_str() };
                map.insert("kind".into(), Json::String(k.into()));
                Explanation::Profile(serde_json::from_value(Json::Object(map)).map_err(bad)?)
            }
            "cp" => Explanation::Cp(serde_json::from_value(value).map_err(bad)?),
            "factor_merge" => Explanation::FactorMerge(serde_json::from_value(value).map_err(bad)?),
            "importance" => Explanation::Importance(serde_json::from_value(value).map_err(bad)?),
            "breakdown" => Explanation::Breakdown(serde_json::from_value(value).map_err(bad)?),
            other => return Err(Error::data(format!("unknown result kind '{other}'"))),
        })
    }
}

fn canonical(value: &Json) -> String {
    // serde_json's default map is ordered by key, and floats print in their
    // shortest round-trip form.
    let mut text = serde_json::to_string(value).expect("JSON values serialise");
    text.push('\n');
    text
}

/// Canonical JSON text of one result: sorted keys, shortest round-trip
/// numbers, trailing newline.
pub fn export_json(result: &Explanation) -> String {
    canonical(&result.to_json_value())
}

/// Canonical JSON array of several results, in order.
pub fn export_json_many(results: &[Explanation]) -> String {
    canonical(&Json::Array(results.iter().map(Explanation::to_json_value).collect()))
}

/// Parses the output of [`export_json`] or [`export_json_many`].
pub fn parse_json(text: &str) -> Result<Vec<Explanation>> {
    let value: Json =
        serde_json::from_str(text).map_err(|e| Error::data(format!("invalid result JSON: {e}")))?;
    match value {
        Json::Array(items) => items.into_iter().map(Explanation::from_json_value).collect(),
        single => Ok(vec![Explanation::from_json_value(single)?]),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub width: u32,
    pub height: u32,
    pub title: Option<String>,
    /// Logarithmic survival axis for performance charts.
    pub log_y: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            width: 800,
            height: 500,
            title: None,
            log_y: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartDocument {
    pub svg: String,
    pub width: u32,
    pub height: u32,
    /// SHA-256 of the canonical JSON of the rendered results.
    pub digest: String,
}

/// Stroke colours assigned to model labels in order of appearance.
pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
    "#7f7f7f", "#bcbd22",
];
pub const POSITIVE_COLOR: &str = "#3a6fc4";
pub const NEGATIVE_COLOR: &str = "#f2c12e";
pub const REFERENCE_COLOR: &str = "#a0a0a0";
const RMSE_COLOR: &str = "#e41a1c";
/// Colours of merged level groups inside a factor-merge panel.
const GROUP_PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#a6761d"];

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && c != '\t' && c != '\n' && c != '\r' => {}
            c => out.push(c),
        }
    }
    out
}

/// Affine map from a data interval onto a pixel interval.
#[derive(Debug, Clone, Copy)]
struct Scale {
    d0: f64,
    d1: f64,
    p0: f64,
    p1: f64,
}

impl Scale {
    fn map(&self, v: f64) -> f64 {
        self.p0 + (v - self.d0) / (self.d1 - self.d0) * (self.p1 - self.p0)
    }
}

/// Step of a 1/2/5 x 10^k tick sequence with roughly `target` intervals.
fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let unit = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    unit * mag
}

/// Domain widened to tick multiples, plus the tick values.
fn nice_axis(lo: f64, hi: f64, target: usize) -> (f64, f64, Vec<f64>, usize) {
    let (lo, hi) = if (hi - lo).abs() < 1e-12 * lo.abs().max(1.0) {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    };
    let step = nice_step(hi - lo, target);
    let first = (lo / step).floor() as i64;
    let last = (hi / step).ceil() as i64;
    let ticks = (first..=last).map(|k| k as f64 * step).collect();
    let decimals = if !(1e-4..1e5).contains(&step) {
        SCIENTIFIC
    } else {
        (-step.log10().floor()).max(0.0) as usize
    };
    (first as f64 * step, last as f64 * step, ticks, decimals)
}

/// Tick precision marker for very large or very small steps.
const SCIENTIFIC: usize = usize::MAX;

fn tick_label(v: f64, decimals: usize) -> String {
    if decimals == SCIENTIFIC {
        return if v == 0.0 { "0".into() } else { format!("{v:e}") };
    }
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy)]
struct Area {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl Area {
    fn right(&self) -> f64 {
        self.x + self.w
    }

    fn bottom(&self) -> f64 {
        self.y + self.h
    }
}

struct Svg {
    out: String,
}

impl Svg {
    fn new(width: u32, height: u32, digest: &str, title: &str) -> Svg {
        let mut out = String::new();
        out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"no\"?>\n");
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"Helvetica, Arial, sans-serif\" font-size=\"11\">"
        );
        let _ = writeln!(out, "<!-- boxplain source sha256:{digest} -->");
        let _ = writeln!(out, "<title>{}</title>", escape(title));
        let _ = writeln!(
            out,
            "<rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>"
        );
        Svg { out }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, extra: &str) {
        let _ = writeln!(
            self.out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{stroke}\"{extra}/>",
            num(x1),
            num(y1),
            num(x2),
            num(y2)
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, content: &str, extra: &str) {
        let _ = writeln!(
            self.out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"{anchor}\"{extra}>{}</text>",
            num(x),
            num(y),
            escape(content)
        );
    }

    #[allow(clippy::too_many_arguments)]
    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, class: &str, tip: &str) {
        let _ = writeln!(
            self.out,
            "<rect class=\"{class}\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{fill}\"><title>{}</title></rect>",
            num(x),
            num(y),
            num(w.max(0.0)),
            num(h.max(0.0)),
            escape(tip)
        );
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str, class: &str, tip: &str) {
        let _ = writeln!(
            self.out,
            "<circle class=\"{class}\" cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{fill}\"><title>{}</title></circle>",
            num(x),
            num(y),
            num(r),
            escape(tip)
        );
    }

    fn polyline(&mut self, points: &[(f64, f64)], stroke: &str, tip: &str) {
        let coords: Vec<String> = points
            .iter()
            .map(|(x, y)| format!("{},{}", num(*x), num(*y)))
            .collect();
        let _ = writeln!(
            self.out,
            "<polyline class=\"series\" points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"2\"><title>{}</title></polyline>",
            coords.join(" "),
            escape(tip)
        );
    }

    fn path(&mut self, d: &str, stroke: &str, class: &str, tip: &str) {
        let _ = writeln!(
            self.out,
            "<path class=\"{class}\" d=\"{d}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"2\"><title>{}</title></path>",
            escape(tip)
        );
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 44.0;
const MARGIN_BOTTOM: f64 = 46.0;
const LEGEND_WIDTH: f64 = 140.0;

/// Draws axes, grid and tick labels; returns the x and y scales.
fn numeric_axes(
    svg: &mut Svg,
    area: Area,
    x_range: (f64, f64),
    y_range: (f64, f64),
    x_title: &str,
    y_title: &str,
) -> (Scale, Scale) {
    let (x0, x1, xticks, xdec) = nice_axis(x_range.0, x_range.1, 6);
    let (y0, y1, yticks, ydec) = nice_axis(y_range.0, y_range.1, 5);
    let xs = Scale {
        d0: x0,
        d1: x1,
        p0: area.x,
        p1: area.right(),
    };
    let ys = Scale {
        d0: y0,
        d1: y1,
        p0: area.bottom(),
        p1: area.y,
    };
    for t in &xticks {
        let px = xs.map(*t);
        svg.line(px, area.y, px, area.bottom(), "#eeeeee", "");
        svg.text(px, area.bottom() + 14.0, "middle", &tick_label(*t, xdec), "");
    }
    for t in &yticks {
        let py = ys.map(*t);
        svg.line(area.x, py, area.right(), py, "#eeeeee", "");
        svg.text(area.x - 6.0, py + 4.0, "end", &tick_label(*t, ydec), "");
    }
    frame(svg, area, x_title, y_title);
    (xs, ys)
}

fn frame(svg: &mut Svg, area: Area, x_title: &str, y_title: &str) {
    svg.line(area.x, area.bottom(), area.right(), area.bottom(), "#333333", "");
    svg.line(area.x, area.y, area.x, area.bottom(), "#333333", "");
    if !x_title.is_empty() {
        svg.text(area.x + area.w / 2.0, area.bottom() + 32.0, "middle", x_title, "");
    }
    if !y_title.is_empty() {
        let (cx, cy) = (area.x - 52.0, area.y + area.h / 2.0);
        svg.text(
            cx,
            cy,
            "middle",
            y_title,
            &format!(" transform=\"rotate(-90 {} {})\"", num(cx), num(cy)),
        );
    }
}

fn legend(svg: &mut Svg, labels: &[&str], x: f64, y: f64) {
    if labels.len() < 2 {
        return;
    }
    for (i, label) in labels.iter().enumerate() {
        let yy = y + i as f64 * 18.0;
        let _ = writeln!(
            svg.out,
            "<rect class=\"legend\" x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\"/>",
            num(x),
            num(yy),
            color(i)
        );
        svg.text(x + 18.0, yy + 10.0, "start", label, "");
    }
}

fn range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    values
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}

/// Splits `area` into `n` panels laid out in a near-square grid.
fn panels(area: Area, n: usize, gap: f64) -> Vec<Area> {
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    let rows = n.div_ceil(cols);
    let w = (area.w - gap * (cols - 1) as f64) / cols as f64;
    let h = (area.h - gap * (rows - 1) as f64) / rows as f64;
    (0..n)
        .map(|i| Area {
            x: area.x + (i % cols) as f64 * (w + gap),
            y: area.y + (i / cols) as f64 * (h + gap),
            w,
            h,
        })
        .collect()
}

fn digest_of(results: &[Explanation]) -> String {
    let hash = Sha256::digest(export_json_many(results).as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

/// Renders one or more same-kind results as an SVG chart, overlaying models.
pub fn render(results: &[Explanation], options: &RenderOptions) -> Result<ChartDocument> {
    let first = results
        .first()
        .ok_or_else(|| Error::usage("nothing to render"))?;
    if let Some(other) = results.iter().find(|r| r.kind() != first.kind()) {
        return Err(Error::usage(format!(
            "cannot overlay {} and {} results in one chart",
            first.kind(),
            other.kind()
        )));
    }
    if !matches!(first, Explanation::Profile(_)) {
        check_labels(results.iter().map(Explanation::label))?;
    }
    let digest = digest_of(results);
    let default_title = match first {
        Explanation::Performance(_) => "Distribution of absolute residuals".to_string(),
        Explanation::Profile(c) => match c.kind {
            ProfileKind::Pdp => format!("Partial dependence: {}", c.variable),
            ProfileKind::Ale => format!("Accumulated local effects: {}", c.variable),
            ProfileKind::Cp => format!("Ceteris paribus: {}", c.variable),
        },
        Explanation::Cp(_) => "Ceteris paribus profiles".to_string(),
        Explanation::FactorMerge(m) => format!("Merging path: {}", m.variable),
        Explanation::Importance(r) => format!("Permutation importance ({})", r.loss),
        Explanation::Breakdown(_) => "Break-down attribution".to_string(),
    };
    let title = options.title.clone().unwrap_or(default_title);
    let (width, height) = (options.width.max(200), options.height.max(150));
    let mut svg = Svg::new(width, height, &digest, &title);
    svg.text(
        f64::from(width) / 2.0,
        22.0,
        "middle",
        &title,
        " font-size=\"15\" font-weight=\"bold\"",
    );

    let mut labels: Vec<&str> = Vec::new();
    for r in results {
        if !labels.contains(&r.label()) {
            labels.push(r.label());
        }
    }
    let legend_w = if labels.len() > 1 { LEGEND_WIDTH } else { 0.0 };
    let area = Area {
        x: MARGIN_LEFT,
        y: MARGIN_TOP,
        w: f64::from(width) - MARGIN_LEFT - MARGIN_RIGHT - legend_w,
        h: f64::from(height) - MARGIN_TOP - MARGIN_BOTTOM,
    };
    let label_index = |l: &str| labels.iter().position(|x| *x == l).unwrap_or(0);

    match first {
        Explanation::Performance(_) => {
            let rs: Vec<&PerformanceResult> = results
                .iter()
                .map(|r| match r {
                    Explanation::Performance(p) => p,
                    _ => unreachable!("kinds checked"),
                })
                .collect();
            draw_performance(&mut svg, area, &rs, options.log_y);
        }
        Explanation::Profile(_) => {
            let curves: Vec<&ProfileCurve> = results
                .iter()
                .map(|r| match r {
                    Explanation::Profile(c) => c,
                    _ => unreachable!("kinds checked"),
                })
                .collect();
            let mut keys = std::collections::HashSet::new();
            for c in &curves {
                if !keys.insert((c.label.as_str(), c.variable.as_str())) {
                    return Err(Error::usage(format!(
                        "duplicate curve for model '{}' and variable '{}'",
                        c.label, c.variable
                    )));
                }
            }
            draw_profiles(&mut svg, area, &curves, &label_index);
        }
        Explanation::Cp(_) => {
            let profiles: Vec<&CpProfile> = results
                .iter()
                .map(|r| match r {
                    Explanation::Cp(c) => c,
                    _ => unreachable!("kinds checked"),
                })
                .collect();
            draw_cp(&mut svg, area, &profiles, &label_index);
        }
        Explanation::FactorMerge(_) => {
            let paths: Vec<&MergingPath> = results
                .iter()
                .map(|r| match r {
                    Explanation::FactorMerge(m) => m,
                    _ => unreachable!("kinds checked"),
                })
                .collect();
            draw_merging(&mut svg, area, &paths);
        }
        Explanation::Importance(_) => {
            let rs: Vec<ImportanceResult> = results
                .iter()
                .map(|r| match r {
                    Explanation::Importance(i) => i.clone(),
                    _ => unreachable!("kinds checked"),
                })
                .collect();
            draw_importance(&mut svg, area, &rs)?;
        }
        Explanation::Breakdown(_) => {
            let rs: Vec<&Attribution> = results
                .iter()
                .map(|r| match r {
                    Explanation::Breakdown(b) => b,
                    _ => unreachable!("kinds checked"),
                })
                .collect();
            draw_breakdown(&mut svg, area, &rs);
        }
    }
    legend(&mut svg, &labels, area.right() + 16.0, area.y);
    Ok(ChartDocument {
        svg: svg.finish(),
        width,
        height,
        digest,
    })
}

fn draw_performance(svg: &mut Svg, area: Area, results: &[&PerformanceResult], log_y: bool) {
    let gap = 60.0;
    let left = Area {
        w: (area.w - gap) / 2.0,
        ..area
    };
    let right = Area {
        x: left.right() + gap,
        w: (area.w - gap) / 2.0,
        ..area
    };
    let t_max = results
        .iter()
        .map(|r| r.max_abs_residual())
        .fold(0.0, f64::max);
    let x_range = (0.0, t_max);

    // Reverse ECDF, drawn as right-continuous steps starting at survival 1.
    let (xs, ys, transform): (Scale, Scale, Box<dyn Fn(f64) -> f64>) = if log_y {
        let floor = results
            .iter()
            .flat_map(|r| r.recdf.iter().map(|p| p.1))
            .filter(|&s| s > 0.0)
            .fold(1.0, f64::min)
            / 2.0;
        let lo = floor.log10().floor();
        let (x0, x1, xticks, xdec) = nice_axis(x_range.0, x_range.1, 5);
        let xs = Scale {
            d0: x0,
            d1: x1,
            p0: left.x,
            p1: left.right(),
        };
        let ys = Scale {
            d0: lo,
            d1: 0.0,
            p0: left.bottom(),
            p1: left.y,
        };
        for t in &xticks {
            let px = xs.map(*t);
            svg.line(px, left.y, px, left.bottom(), "#eeeeee", "");
            svg.text(px, left.bottom() + 14.0, "middle", &tick_label(*t, xdec), "");
        }
        for k in (lo as i64)..=0 {
            let py = ys.map(k as f64);
            svg.line(left.x, py, left.right(), py, "#eeeeee", "");
            svg.text(left.x - 6.0, py + 4.0, "end", &format!("1e{k}"), "");
        }
        frame(svg, left, "|residual|", "1 - ECDF (log)");
        let floor_log = lo;
        (
            xs,
            ys,
            Box::new(move |s: f64| if s > 0.0 { s.log10().max(floor_log) } else { floor_log }),
        )
    } else {
        let (xs, ys) = numeric_axes(svg, left, x_range, (0.0, 1.0), "|residual|", "1 - ECDF");
        (xs, ys, Box::new(|s| s))
    };
    for (i, r) in results.iter().enumerate() {
        let mut d = format!("M {} {}", num(xs.map(0.0)), num(ys.map(transform(1.0))));
        for &(t, s) in &r.recdf {
            let _ = write!(d, " H {} V {}", num(xs.map(t)), num(ys.map(transform(s))));
        }
        svg.path(&d, color(i), "recdf", &r.label);
    }

    // Boxplots of |residual| with the RMSE marked in red.
    let rmse_max = results.iter().map(|r| r.rmse).fold(0.0, f64::max);
    let (x0, x1, xticks, xdec) = nice_axis(0.0, t_max.max(rmse_max), 5);
    let bx = Scale {
        d0: x0,
        d1: x1,
        p0: right.x,
        p1: right.right(),
    };
    for t in &xticks {
        let px = bx.map(*t);
        svg.line(px, right.y, px, right.bottom(), "#eeeeee", "");
        svg.text(px, right.bottom() + 14.0, "middle", &tick_label(*t, xdec), "");
    }
    frame(svg, right, "|residual|", "");
    let band = right.h / results.len() as f64;
    for (i, r) in results.iter().enumerate() {
        let b = &r.boxplot;
        let cy = right.y + band * (i as f64 + 0.5);
        let half = (band * 0.25).min(18.0);
        svg.text(right.x + 4.0, cy - half - 4.0, "start", &r.label, "");
        svg.line(bx.map(b.lower_whisker), cy, bx.map(b.q1), cy, "#333333", "");
        svg.line(bx.map(b.q3), cy, bx.map(b.upper_whisker), cy, "#333333", "");
        svg.rect(
            bx.map(b.q1),
            cy - half,
            bx.map(b.q3) - bx.map(b.q1),
            2.0 * half,
            color(i),
            "box",
            &format!("{}: q1 {} median {} q3 {}", r.label, b.q1, b.median, b.q3),
        );
        svg.line(bx.map(b.median), cy - half, bx.map(b.median), cy + half, "#000000", " stroke-width=\"2\"");
        for o in &b.outliers {
            svg.circle(bx.map(*o), cy, 2.5, "#555555", "outlier", &format!("{o}"));
        }
        svg.circle(bx.map(r.rmse), cy, 4.0, RMSE_COLOR, "rmse", &format!("{} RMSE {}", r.label, r.rmse));
    }
}

/// Horizontal positions for a mixed numeric/categorical grid.
enum XAxis {
    Numeric(Scale),
    Bands { levels: Vec<String>, area: Area },
}

impl XAxis {
    fn pos(&self, v: &Value) -> f64 {
        match (self, v) {
            (XAxis::Numeric(s), Value::Num(x)) => s.map(*x),
            (XAxis::Bands { levels, area }, Value::Cat(l)) => {
                let i = levels.iter().position(|x| x == l).unwrap_or(0);
                area.x + area.w * (i as f64 + 0.5) / levels.len() as f64
            }
            _ => f64::NAN,
        }
    }
}

fn xy_panel(
    svg: &mut Svg,
    area: Area,
    curves: &[(&ProfileCurve, usize)],
    variable: &str,
    y_range: (f64, f64),
    y_title: &str,
) -> (XAxis, Scale) {
    let categorical = curves
        .iter()
        .any(|(c, _)| c.points.iter().any(|(z, _)| z.as_str().is_some()));
    if categorical {
        let mut levels: Vec<String> = curves
            .iter()
            .flat_map(|(c, _)| c.points.iter().filter_map(|(z, _)| z.as_str().map(str::to_string)))
            .collect();
        levels.sort();
        levels.dedup();
        let (y0, y1, yticks, ydec) = nice_axis(y_range.0, y_range.1, 5);
        let ys = Scale {
            d0: y0,
            d1: y1,
            p0: area.bottom(),
            p1: area.y,
        };
        for t in &yticks {
            let py = ys.map(*t);
            svg.line(area.x, py, area.right(), py, "#eeeeee", "");
            svg.text(area.x - 6.0, py + 4.0, "end", &tick_label(*t, ydec), "");
        }
        let axis = XAxis::Bands {
            levels: levels.clone(),
            area,
        };
        for l in &levels {
            svg.text(axis.pos(&Value::Cat(l.clone())), area.bottom() + 14.0, "middle", l, "");
        }
        frame(svg, area, variable, y_title);
        (axis, ys)
    } else {
        let x_range = range(
            curves
                .iter()
                .flat_map(|(c, _)| c.points.iter().filter_map(|(z, _)| z.as_f64())),
        );
        let (xs, ys) = numeric_axes(svg, area, x_range, y_range, variable, y_title);
        (XAxis::Numeric(xs), ys)
    }
}

fn draw_profiles(svg: &mut Svg, area: Area, curves: &[&ProfileCurve], label_index: &dyn Fn(&str) -> usize) {
    let mut variables: Vec<&str> = Vec::new();
    for c in curves {
        if !variables.contains(&c.variable.as_str()) {
            variables.push(&c.variable);
        }
    }
    let y_title = match curves[0].kind {
        ProfileKind::Pdp => "average prediction",
        ProfileKind::Ale => "accumulated local effect",
        ProfileKind::Cp => "prediction",
    };
    let y_range = range(curves.iter().flat_map(|c| c.responses()));
    for (variable, panel) in variables.iter().zip(panels(area, variables.len(), 70.0)) {
        let members: Vec<(&ProfileCurve, usize)> = curves
            .iter()
            .filter(|c| c.variable == *variable)
            .map(|c| (*c, label_index(&c.label)))
            .collect();
        let (xa, ys) = xy_panel(svg, panel, &members, variable, y_range, y_title);
        for (c, li) in members {
            let pts: Vec<(f64, f64)> = c.points.iter().map(|(z, g)| (xa.pos(z), ys.map(*g))).collect();
            svg.polyline(&pts, color(li), &format!("{} / {}", c.label, c.variable));
        }
    }
}

fn draw_cp(svg: &mut Svg, area: Area, profiles: &[&CpProfile], label_index: &dyn Fn(&str) -> usize) {
    let normalized = profiles.iter().all(|p| !p.normalized.is_empty());
    let y_range = range(
        profiles
            .iter()
            .flat_map(|p| p.curves.iter().flat_map(|c| c.responses()).chain([p.anchor.prediction])),
    );
    if normalized {
        let (xs, ys) = numeric_axes(svg, area, (0.0, 1.0), y_range, "quantile of variable", "prediction");
        for p in profiles {
            let li = label_index(&p.label);
            for (variable, pts) in &p.normalized {
                let px: Vec<(f64, f64)> = pts.iter().map(|(u, g)| (xs.map(*u), ys.map(*g))).collect();
                svg.polyline(&px, color(li), &format!("{} / {variable}", p.label));
                if let Some(last) = px.last() {
                    svg.text(last.0 + 3.0, last.1 + 4.0, "start", variable, " font-size=\"9\"");
                }
            }
        }
        return;
    }
    let mut variables: Vec<&str> = Vec::new();
    for p in profiles {
        for c in &p.curves {
            if !variables.contains(&c.variable.as_str()) {
                variables.push(&c.variable);
            }
        }
    }
    for (variable, panel) in variables.iter().zip(panels(area, variables.len(), 70.0)) {
        let members: Vec<(&ProfileCurve, usize)> = profiles
            .iter()
            .filter_map(|p| p.curve(variable).map(|c| (c, label_index(&p.label))))
            .collect();
        let (xa, ys) = xy_panel(svg, panel, &members, variable, y_range, "prediction");
        for (c, li) in &members {
            let pts: Vec<(f64, f64)> = c.points.iter().map(|(z, g)| (xa.pos(z), ys.map(*g))).collect();
            svg.polyline(&pts, color(*li), &format!("{} / {}", c.label, c.variable));
        }
        for p in profiles {
            if let Some(own) = p.anchor.observation.get(variable) {
                let x = xa.pos(own);
                if x.is_finite() {
                    svg.circle(
                        x,
                        ys.map(p.anchor.prediction),
                        3.5,
                        color(label_index(&p.label)),
                        "anchor",
                        &format!("{}: {variable} = {own}, prediction {}", p.label, p.anchor.prediction),
                    );
                }
            }
        }
    }
}

fn draw_merging(svg: &mut Svg, area: Area, paths: &[&MergingPath]) {
    for (i, (path, panel)) in paths.iter().zip(panels(area, paths.len(), 90.0)).enumerate() {
        let cost_max = path.steps.last().map_or(0.0, |s| s.cumulative);
        let inner = Area {
            x: panel.x + 60.0,
            w: (panel.w - 60.0).max(10.0),
            ..panel
        };
        let (x0, x1, xticks, xdec) = nice_axis(0.0, cost_max, 4);
        let xs = Scale {
            d0: x0,
            d1: x1,
            p0: inner.x,
            p1: inner.right(),
        };
        for t in &xticks {
            let px = xs.map(*t);
            svg.line(px, inner.y, px, inner.bottom(), "#eeeeee", "");
            svg.text(px, inner.bottom() + 14.0, "middle", &tick_label(*t, xdec), "");
        }
        frame(svg, inner, "cumulative merge cost", "");
        svg.text(
            inner.x + inner.w / 2.0,
            inner.y - 6.0,
            "middle",
            &path.label,
            &format!(" font-weight=\"bold\" fill=\"{}\"", color(i)),
        );

        let n = path.levels.len();
        let row = inner.h / n as f64;
        let group_of = |level: &str| {
            path.groups
                .iter()
                .position(|g| g.iter().any(|l| l == level))
                .unwrap_or(0)
        };
        // Live groups: (members, x, y).
        let mut live: Vec<(Vec<String>, f64, f64)> = path
            .levels
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let y = inner.y + row * (n - 1 - k) as f64 + row / 2.0;
                (vec![l.level.clone()], xs.map(0.0), y)
            })
            .collect();
        for (k, l) in path.levels.iter().enumerate() {
            let y = inner.y + row * (n - 1 - k) as f64 + row / 2.0;
            svg.text(
                inner.x - 6.0,
                y + 4.0,
                "end",
                &l.level,
                &format!(" fill=\"{}\"", GROUP_PALETTE[group_of(&l.level) % GROUP_PALETTE.len()]),
            );
            svg.circle(
                xs.map(0.0),
                y,
                3.0,
                GROUP_PALETTE[group_of(&l.level) % GROUP_PALETTE.len()],
                "level",
                &format!("{}: mean {} (n = {})", l.level, l.mean, l.count),
            );
        }
        for step in &path.steps {
            let find = |members: &[String], live: &[(Vec<String>, f64, f64)]| {
                live.iter().position(|g| g.0 == members).expect("step merges live groups")
            };
            let a = find(&step.left, &live);
            let b = find(&step.right, &live);
            let xm = xs.map(step.cumulative);
            let (ga, gb) = (live[a].clone(), live[b].clone());
            let d = format!(
                "M {} {} H {} V {} H {}",
                num(ga.1),
                num(ga.2),
                num(xm),
                num(gb.2),
                num(gb.1)
            );
            svg.path(&d, "#555555", "merge", &format!("cost {}", step.cost));
            let mut members = ga.0.clone();
            members.extend(gb.0.clone());
            let (lo, hi) = (a.min(b), a.max(b));
            live.remove(hi);
            live[lo] = (members, xm, (ga.2 + gb.2) / 2.0);
        }
    }
}

fn draw_importance(svg: &mut Svg, area: Area, results: &[ImportanceResult]) -> Result<()> {
    crate::variable_importance::compare_importance(results)?;
    let mut order = variable_order(results);
    order.push("(all shuffled)".to_string());
    let lo = results
        .iter()
        .flat_map(|r| r.rows.iter().map(|x| x.permuted_mean).chain([r.baseline]))
        .fold(f64::INFINITY, f64::min);
    let hi = results
        .iter()
        .flat_map(|r| {
            r.rows
                .iter()
                .map(|x| x.permuted_mean)
                .chain([r.baseline, r.all_shuffled])
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let (x0, x1, xticks, xdec) = nice_axis(lo.min(0.0).max(lo - (hi - lo) * 0.05), hi, 6);
    let inner = Area {
        x: area.x + 50.0,
        w: area.w - 50.0,
        ..area
    };
    let xs = Scale {
        d0: x0,
        d1: x1,
        p0: inner.x,
        p1: inner.right(),
    };
    for t in &xticks {
        let px = xs.map(*t);
        svg.line(px, inner.y, px, inner.bottom(), "#eeeeee", "");
        svg.text(px, inner.bottom() + 14.0, "middle", &tick_label(*t, xdec), "");
    }
    frame(svg, inner, &format!("loss ({})", results[0].loss), "");
    let band = inner.h / order.len() as f64;
    let bar = (band * 0.8 / results.len() as f64).min(22.0);
    for (v, variable) in order.iter().enumerate() {
        let top = inner.y + band * v as f64 + (band - bar * results.len() as f64) / 2.0;
        svg.text(inner.x - 6.0, inner.y + band * (v as f64 + 0.5) + 4.0, "end", variable, "");
        for (i, r) in results.iter().enumerate() {
            let end = if v + 1 == order.len() {
                Some(r.all_shuffled)
            } else {
                r.row(variable).map(|x| x.permuted_mean)
            };
            let Some(end) = end else { continue };
            let (a, b) = (xs.map(r.baseline), xs.map(end));
            svg.rect(
                a.min(b),
                top + bar * i as f64,
                (b - a).abs(),
                bar * 0.9,
                color(i),
                "interval",
                &format!("{}: {variable} {} -> {}", r.label, r.baseline, end),
            );
        }
    }
    for (i, r) in results.iter().enumerate() {
        let x = xs.map(r.baseline);
        svg.line(x, inner.y, x, inner.bottom(), color(i), " stroke-dasharray=\"4 3\" class=\"baseline\"");
    }
    Ok(())
}

fn draw_breakdown(svg: &mut Svg, area: Area, results: &[&Attribution]) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in results {
        let mut acc = r.baseline;
        lo = lo.min(acc).min(r.prediction);
        hi = hi.max(acc).max(r.prediction);
        for s in &r.steps {
            acc += s.contribution;
            lo = lo.min(acc);
            hi = hi.max(acc);
        }
    }
    let inner = Area {
        x: area.x + 90.0,
        w: area.w - 90.0,
        ..area
    };
    let (x0, x1, xticks, xdec) = nice_axis(lo, hi, 6);
    let xs = Scale {
        d0: x0,
        d1: x1,
        p0: inner.x,
        p1: inner.right(),
    };
    for t in &xticks {
        let px = xs.map(*t);
        svg.line(px, inner.y, px, inner.bottom(), "#eeeeee", "");
        svg.text(px, inner.bottom() + 14.0, "middle", &tick_label(*t, xdec), "");
    }
    frame(svg, inner, "prediction", "");
    let gap = 16.0;
    let panel_h = (inner.h - gap * (results.len() - 1) as f64) / results.len() as f64;
    for (i, r) in results.iter().enumerate() {
        let top = inner.y + i as f64 * (panel_h + gap);
        let rows = r.steps.len() + 2;
        let row = panel_h / rows as f64;
        let h = row * 0.7;
        let row_y = |k: usize| top + row * k as f64 + (row - h) / 2.0;
        if results.len() > 1 {
            svg.text(inner.right() - 4.0, top + 10.0, "end", &r.label, &format!(" fill=\"{}\" font-weight=\"bold\"", color(i)));
        }
        let base_x = xs.map(r.baseline);
        svg.line(base_x, top, base_x, top + panel_h, REFERENCE_COLOR, " stroke-dasharray=\"3 3\" class=\"reference\"");
        svg.text(inner.x - 6.0, row_y(0) + h / 2.0 + 4.0, "end", "intercept", "");
        svg.rect(base_x - 1.0, row_y(0), 2.0, h, REFERENCE_COLOR, "bar-ref", &format!("baseline {}", r.baseline));
        let mut acc = r.baseline;
        for (k, s) in r.steps.iter().enumerate() {
            let next = acc + s.contribution;
            let (a, b) = (xs.map(acc), xs.map(next));
            let (fill, class) = if s.contribution > 0.0 {
                (POSITIVE_COLOR, "bar-pos")
            } else if s.contribution < 0.0 {
                (NEGATIVE_COLOR, "bar-neg")
            } else {
                (REFERENCE_COLOR, "bar-zero")
            };
            let y = row_y(k + 1);
            svg.text(inner.x - 6.0, y + h / 2.0 + 4.0, "end", &format!("{} = {}", s.variable, s.value), "");
            svg.rect(
                a.min(b),
                y,
                (b - a).abs().max(1.0),
                h,
                fill,
                class,
                &format!("{} = {}: {:+}", s.variable, s.value, s.contribution),
            );
            svg.text(
                a.max(b) + 4.0,
                y + h / 2.0 + 4.0,
                "start",
                &format!("{:+.3}", s.contribution),
                " font-size=\"9\"",
            );
            acc = next;
        }
        let y = row_y(rows - 1);
        let (a, b) = (base_x, xs.map(r.prediction));
        svg.text(inner.x - 6.0, y + h / 2.0 + 4.0, "end", "prediction", "");
        svg.rect(
            a.min(b),
            y,
            (b - a).abs().max(1.0),
            h,
            REFERENCE_COLOR,
            "bar-ref",
            &format!("prediction {}", r.prediction),
        );
    }
}

//! Static SVG line charts from trace, race-curve and aggregate CSVs.
//!
//! Input files are only read. Each chart carries its numeric axis ranges
//! as `data-*` attributes on the plot frame, one `<polyline>` per series and
//! one legend entry per series.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mavg::trace::TRACE_HEADER;
use mavg::vecops::fmt_f64;
use mavg::Error;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub const RACE_CURVES_HEADER: &str = "mu,n,mean_f_value";

/// A CSV held as raw cells, with 1-based file line numbers per row.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Table, Error> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let headers = rdr
            .headers()
            .map_err(|e| Error::parse(1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::parse(e.position().map_or(0, |p| p.line()), e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec.iter().map(str::to_string).collect()));
        }
        Ok(Table { headers, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize, Error> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(1, format!("no column '{name}' in header")))
    }

    /// Numeric cells of column `idx`; empty cells become `None`.
    pub fn numbers(&self, idx: usize) -> Result<Vec<Option<f64>>, Error> {
        self.rows
            .iter()
            .map(|(line, cells)| {
                let raw = cells[idx].trim();
                if raw.is_empty() {
                    return Ok(None);
                }
                raw.parse::<f64>()
                    .map(Some)
                    .map_err(|_| Error::parse(*line, format!("'{raw}' in column '{}' is not a number", self.headers[idx])))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Which columns to draw.
#[derive(Debug, Clone, Default)]
pub struct PlotRequest {
    pub x: Option<String>,
    pub y: Option<String>,
    /// Split rows into one series per distinct value of this column.
    pub series: Option<String>,
    pub log_y: bool,
    pub title: Option<String>,
}

enum Schema {
    Trace,
    RaceCurves,
    Aggregate,
    Other,
}

fn schema(t: &Table) -> Schema {
    let h = t.headers.join(",");
    if h == TRACE_HEADER {
        Schema::Trace
    } else if h == RACE_CURVES_HEADER {
        Schema::RaceCurves
    } else if h == mavg::harness::AGGREGATE_HEADER {
        Schema::Aggregate
    } else {
        Schema::Other
    }
}

/// Default `(x, y, series)` columns for a recognised file.
fn defaults(t: &Table) -> (Option<&'static str>, Option<&'static str>, Option<&'static str>) {
    match schema(t) {
        Schema::Trace => (Some("n"), Some("f_value"), None),
        Schema::RaceCurves => (Some("n"), Some("mean_f_value"), Some("mu")),
        Schema::Aggregate => (Some("mu"), Some("mean_final_f"), None),
        Schema::Other => (None, None, None),
    }
}

/// Series of one table. Rows with an empty or non-finite x or y are skipped;
/// with `log_y`, so are rows with y ≤ 0.
pub fn table_series(t: &Table, req: &PlotRequest, fallback_label: &str) -> Result<(Vec<Series>, String, String), Error> {
    let (dx, dy, ds) = defaults(t);
    let xname = req.x.as_deref().or(dx).ok_or_else(|| Error::argument("unrecognised CSV layout: pass --x and --y"))?;
    let yname = req.y.as_deref().or(dy).ok_or_else(|| Error::argument("unrecognised CSV layout: pass --x and --y"))?;
    let xs = t.numbers(t.column(xname)?)?;
    let ys = t.numbers(t.column(yname)?)?;
    let group = match req.series.as_deref().or(ds) {
        Some(name) => Some(t.column(name)?),
        None => None,
    };
    let mut out: Vec<Series> = Vec::new();
    for (i, (_, cells)) in t.rows.iter().enumerate() {
        let label = group.map_or_else(|| fallback_label.to_string(), |g| cells[g].clone());
        let pos = match out.iter().position(|s| s.label == label) {
            Some(p) => p,
            None => {
                out.push(Series { label, points: Vec::new() });
                out.len() - 1
            }
        };
        if let (Some(x), Some(y)) = (xs[i], ys[i]) {
            if x.is_finite() && y.is_finite() && (!req.log_y || y > 0.0) {
                out[pos].points.push((x, y));
            }
        }
    }
    Ok((out, xname.to_string(), yname.to_string()))
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders `series` as an SVG line chart. Axis ranges are the min/max of the
/// plotted values.
pub fn render_svg(series: &[Series], x_label: &str, y_label: &str, req: &PlotRequest) -> Result<String> {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (Some((x0, x1)), Some((y0, y1))) = (range(all().map(|p| p.0)), range(all().map(|p| p.1))) else {
        bail!("nothing to plot: no finite points");
    };
    let ty = |y: f64| if req.log_y { y.log10() } else { y };
    let (py0, py1) = (ty(y0), ty(y1));
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / span(x0, x1) * plot_w;
    let sy = |y: f64| MARGIN_T + plot_h - (ty(y) - py0) / span(py0, py1) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if let Some(t) = &req.title {
        let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(t));
    }
    let _ = writeln!(
        svg,
        r#"<g class="frame" data-x-column="{}" data-y-column="{}" data-x-min="{}" data-x-max="{}" data-y-min="{}" data-y-max="{}" data-log-y="{}">"#,
        escape(x_label),
        escape(y_label),
        fmt_f64(x0),
        fmt_f64(x1),
        fmt_f64(y0),
        fmt_f64(y1),
        req.log_y
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = if req.log_y { 10f64.powf(py0 + f * (py1 - py0)) } else { y0 + f * (y1 - y0) };
        let (gx, gy) = (sx(xv), sy(yv));
        let _ = writeln!(
            svg,
            r#"<line x1="{gx:.2}" y1="{}" x2="{gx:.2}" y2="{}" stroke="black"/><text x="{gx:.2}" y="{}" text-anchor="middle">{}</text>"#,
            MARGIN_T + plot_h,
            MARGIN_T + plot_h + 5.0,
            MARGIN_T + plot_h + 18.0,
            tick(xv)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{gy:.2}" x2="{MARGIN_L}" y2="{gy:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN_L - 5.0,
            MARGIN_L - 8.0,
            gy + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        MARGIN_T + plot_h / 2.0,
        escape(&if req.log_y { format!("{y_label} (log)") } else { y_label.to_string() })
    );
    let _ = writeln!(svg, "</g>");

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="series" data-label="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            escape(&s.label),
            pts.join(" ")
        );
    }
    let lx = WIDTH - MARGIN_R + 15.0;
    let _ = writeln!(svg, r#"<g class="legend">"#);
    for (i, s) in series.iter().enumerate() {
        let ly = MARGIN_T + 10.0 + 18.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text class="legend-entry" x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    let _ = writeln!(svg, "</g>\n</svg>");
    Ok(svg)
}

fn tick(v: f64) -> String {
    if v == 0.0 || (1e-3..1e5).contains(&v.abs()) {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Reads every input CSV and renders them into one chart. Series from
/// files without a grouping column are labelled by file stem.
pub fn plot_files(inputs: &[impl AsRef<Path>], req: &PlotRequest) -> Result<String> {
    if inputs.is_empty() {
        bail!("plot needs at least one input CSV");
    }
    let mut series = Vec::new();
    let mut labels: Option<(String, String)> = None;
    for path in inputs {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let table = Table::parse(&text).with_context(|| format!("in {}", path.display()))?;
        let stem = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        let (s, x, y) = table_series(&table, req, &stem).with_context(|| format!("in {}", path.display()))?;
        labels.get_or_insert((x, y));
        series.extend(s);
    }
    let (x, y) = labels.expect("at least one input");
    render_svg(&series, &x, &y, req)
}

//! Standalone SVG line plots from the CSV outputs.

use crate::error::{CliError, CliResult};
use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 150.0, 40.0, 55.0); // left, right, top, bottom
const PALETTE: [&str; 8] = [
    "#1b6ca8", "#d1495b", "#66a182", "#edae49", "#6a4c93", "#00798c", "#8d6a9f", "#30362f",
];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Dashed vertical reference lines.
    pub references: Vec<(f64, String)>,
}

/// Round tick positions covering [lo, hi].
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl LinePlot {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        let pts = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|p| p.0.is_finite() && p.1.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        for (r, _) in &self.references {
            x0 = x0.min(*r);
            x1 = x1.max(*r);
        }
        if !x0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            (x0, x1) = (x0 - 0.5, x1 + 0.5);
        }
        if y1 - y0 < 1e-12 {
            (y0, y1) = (y0 - 0.5, y1 + 0.5);
        }
        let pad = 0.05 * (y1 - y0);
        (
            x0,
            x1,
            (y0 - pad).min(if y0 >= 0.0 { 0.0 } else { y0 - pad }),
            y1 + pad,
        )
    }

    pub fn render(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let (ml, mr, mt, mb) = MARGIN;
        let (pw, ph) = (WIDTH - ml - mr, HEIGHT - mt - mb);
        let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| mt + (1.0 - (y - y0) / (y1 - y0)) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            ml + pw / 2.0,
            escape(&self.title)
        );
        for t in ticks(x0, x1) {
            let x = sx(t);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{mt}" x2="{x:.2}" y2="{:.2}" stroke="#eeeeee"/>"##,
                mt + ph
            );
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                mt + ph + 16.0,
                fmt_tick(t)
            );
        }
        for t in ticks(y0, y1) {
            let y = sy(t);
            let _ = writeln!(
                s,
                r##"<line x1="{ml}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#eeeeee"/>"##,
                ml + pw
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                ml - 6.0,
                y + 4.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            s,
            r##"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333333"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            ml + pw / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            mt + ph / 2.0,
            escape(&self.y_label)
        );
        for (r, label) in &self.references {
            let x = sx(*r);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{mt}" x2="{x:.2}" y2="{:.2}" stroke="#555555" stroke-dasharray="6 4"/>"##,
                mt + ph
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
                x + 4.0,
                mt + 12.0,
                escape(label)
            );
        }
        for (i, series) in self.series.iter().enumerate() {
            let colour = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = series
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
                pts.join(" ")
            );
            if series.points.len() <= 30 {
                for p in &pts {
                    let (x, y) = p.split_once(',').unwrap_or(("0", "0"));
                    let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{colour}"/>"#);
                }
            }
            let ly = mt + 10.0 + 20.0 * i as f64;
            let lx = ml + pw + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#,
                lx + 22.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}">{}</text>"#,
                lx + 28.0,
                ly + 4.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// A CSV read into string cells with a column index.
struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> CliResult<Self> {
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let headers = rdr
            .headers()
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
            .iter()
            .map(String::from)
            .collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(String::from).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Ok(Self { headers, rows })
    }

    fn has(&self, cols: &[&str]) -> bool {
        cols.iter().all(|c| self.headers.iter().any(|h| h == c))
    }

    fn col(&self, name: &str) -> usize {
        self.headers
            .iter()
            .position(|h| h == name)
            .expect("column checked by has()")
    }

    fn num(&self, row: &[String], name: &str) -> CliResult<f64> {
        let cell = &row[self.col(name)];
        if cell.is_empty() {
            return Ok(f64::NAN);
        }
        cell.parse()
            .map_err(|_| CliError::Input(format!("column '{name}': '{cell}' is not a number")))
    }
}

/// Groups `(key, series, x, y)` tuples into one plot per key.
fn grouped(
    items: Vec<(String, String, f64, f64)>,
) -> BTreeMap<String, BTreeMap<String, Vec<(f64, f64)>>> {
    let mut out: BTreeMap<String, BTreeMap<String, Vec<(f64, f64)>>> = BTreeMap::new();
    for (key, series, x, y) in items {
        out.entry(key)
            .or_default()
            .entry(series)
            .or_default()
            .push((x, y));
    }
    for panel in out.values_mut() {
        for pts in panel.values_mut() {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
    }
    out
}

fn series_of(panel: BTreeMap<String, Vec<(f64, f64)>>) -> Vec<Series> {
    panel
        .into_iter()
        .map(|(name, points)| Series { name, points })
        .collect()
}

/// SVG files (name, contents) for one CSV output.
pub fn plots_for(path: &Path, reference: f64) -> CliResult<Vec<(String, String)>> {
    let t = Table::read(path)?;
    if t.rows.is_empty() {
        return Err(CliError::Input(format!(
            "{} has no rows to plot",
            path.display()
        )));
    }
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("plot")
        .to_string();
    let mut out = vec![];
    if t.has(&["rwd_shift", "lambda", "delta", "mean_weight"]) {
        let mut items = vec![];
        for r in &t.rows {
            let delta = &r[t.col("delta")];
            let lambda = &r[t.col("lambda")];
            items.push((
                delta.clone(),
                format!("λ = {lambda}"),
                t.num(r, "rwd_shift")?,
                t.num(r, "mean_weight")?,
            ));
        }
        for (delta, panel) in grouped(items) {
            let plot = LinePlot {
                title: format!("Mixture weight, δ = {delta}"),
                x_label: "treatment log-odds offset of borrowed sources".into(),
                y_label: "mean 1 − ω".into(),
                series: series_of(panel),
                references: vec![],
            };
            out.push((format!("{stem}_delta{delta}.svg"), plot.render()));
        }
    } else if t.has(&["heterogeneity", "method", "ratio"]) {
        let mut items = vec![];
        for r in &t.rows {
            items.push((
                String::new(),
                r[t.col("method")].clone(),
                t.num(r, "heterogeneity")?,
                t.num(r, "ratio")?,
            ));
        }
        for (_, panel) in grouped(items) {
            let plot = LinePlot {
                title: "Sample size relative to no borrowing".into(),
                x_label: "treatment log-odds offset of borrowed sources".into(),
                y_label: "required n / required n without borrowing".into(),
                series: series_of(panel),
                references: vec![],
            };
            out.push((format!("{stem}.svg"), plot.render()));
        }
    } else if t.has(&["scaling", "method", "x", "density"]) {
        let mut items = vec![];
        for r in &t.rows {
            items.push((
                r[t.col("scaling")].clone(),
                r[t.col("method")].clone(),
                t.num(r, "x")?,
                t.num(r, "density")?,
            ));
        }
        for (scaling, panel) in grouped(items) {
            let plot = LinePlot {
                title: format!("Posterior of the risk difference, real-world cohort ×{scaling}"),
                x_label: "treatment − control response rate".into(),
                y_label: "density".into(),
                series: series_of(panel),
                references: vec![(reference, format!("{reference}"))],
            };
            out.push((format!("{stem}_x{scaling}.svg"), plot.render()));
        }
    } else {
        return Err(CliError::Input(format!(
            "{}: unrecognised columns; expected a curve, sample-size or case-study density table",
            path.display()
        )));
    }
    Ok(out)
}

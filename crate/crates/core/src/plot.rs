//! SVG rendering of the CSV tables emitted by the command-line tool.
//!
//! Error-count-spread tables become bar charts, margin tables become a pair
//! of overlaid histograms (correct vs incorrect), everything else a line
//! chart of every numeric column against the first.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::io::Table;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];
const MARGIN_BINS: usize = 20;

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Bars {
    pub name: String,
    /// `(left edge, right edge, height)`.
    pub bins: Vec<(f64, f64, f64)>,
}

pub fn render_table(table: &Table) -> Result<String> {
    let kind = table.provenance.schema.split('/').next().unwrap_or("");
    match kind {
        "ecs" => {
            let k = table.numeric_column("k")?;
            let count = table.numeric_column("count")?;
            let bins = k
                .iter()
                .zip(&count)
                .filter_map(|(k, c)| Some((k.as_ref()? - 0.4, k.as_ref()? + 0.4, *c.as_ref()?)))
                .collect();
            Ok(bar_chart(&kind_title(table), "networks agreeing on a wrong class", "count", &[Bars {
                name: "count".into(),
                bins,
            }]))
        }
        "margin" => {
            let margins = table.numeric_column("margin")?;
            let correct = table.numeric_column("correct")?;
            let mut split = [Vec::new(), Vec::new()];
            for (m, c) in margins.iter().zip(&correct) {
                if let (Some(m), Some(c)) = (m, c) {
                    split[usize::from(*c != 0.0)].push(*m);
                }
            }
            let bars = [("incorrect", &split[0]), ("correct", &split[1])]
                .into_iter()
                .map(|(name, values)| Bars {
                    name: name.into(),
                    bins: histogram(values, -1.0, 1.0, MARGIN_BINS),
                })
                .collect::<Vec<_>>();
            Ok(bar_chart(&kind_title(table), "agreement margin", "examples", &bars))
        }
        _ => {
            let x_name = table
                .columns
                .first()
                .ok_or_else(|| Error::input("table has no columns"))?
                .clone();
            let xs = table.numeric_column(&x_name)?;
            let mut series = Vec::new();
            for name in table.columns.iter().skip(1) {
                let Ok(ys) = table.numeric_column(name) else { continue };
                let points: Vec<(f64, f64)> = xs
                    .iter()
                    .zip(&ys)
                    .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
                    .collect();
                if !points.is_empty() {
                    series.push(Series { name: name.clone(), points });
                }
            }
            if series.is_empty() {
                return Err(Error::input("no numeric series to plot"));
            }
            Ok(line_chart(&kind_title(table), &x_name, &series))
        }
    }
}

fn kind_title(table: &Table) -> String {
    table.provenance.schema.clone()
}

/// Counts of `values` in `bins` equal-width bins over `[lo, hi]`; values on
/// or beyond the edges fall in the end bins.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64, f64)> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(b, &c)| (lo + b as f64 * width, lo + (b + 1) as f64 * width, c as f64))
        .collect()
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let pad = |a: f64, b: f64| if a == b { (a - 0.5, b + 0.5) } else { (a, b) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn fmt_tick(v: f64) -> String {
    let r = (v * 1000.0).round() / 1000.0;
    if r == r.trunc() {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(svg: &mut String, title: &str, frame: &Frame, x_label: &str, y_label: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title)
    );
    let (bx, by) = (HEIGHT - BOTTOM, WIDTH - RIGHT);
    let _ = writeln!(
        svg,
        r#"<path d="M{LEFT} {TOP} V{bx} H{by}" fill="none" stroke="black"/>"#
    );
    for t in 0..=5 {
        let fx = frame.x0 + (frame.x1 - frame.x0) * t as f64 / 5.0;
        let fy = frame.y0 + (frame.y1 - frame.y0) * t as f64 / 5.0;
        let (px, py) = (frame.px(fx), frame.py(fy));
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.2}" y1="{bx}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
            bx + 4.0,
            bx + 16.0,
            fmt_tick(fx)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 4.0,
            LEFT - 6.0,
            py + 4.0,
            fmt_tick(fy)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{0}" text-anchor="middle" transform="rotate(-90 14 {0})">{1}</text>"#,
        (TOP + HEIGHT - BOTTOM) / 2.0,
        escape(y_label)
    );
}

fn legend(svg: &mut String, names: &[&str]) {
    for (k, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 16.0 * k as f64;
        let x = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{x}" y="{}" width="12" height="8" fill="{}"/><text x="{}" y="{y}">{}</text>"#,
            y - 8.0,
            PALETTE[k % PALETTE.len()],
            x + 16.0,
            escape(name)
        );
    }
}

pub fn line_chart(title: &str, x_label: &str, series: &[Series]) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let frame = Frame::new(x0, x1, y0, y1);
    let mut svg = String::new();
    open(&mut svg, title, &frame, x_label, "");
    for (k, s) in series.iter().enumerate() {
        let mut d = String::new();
        for (j, &(x, y)) in s.points.iter().enumerate() {
            let _ = write!(d, "{}{:.2} {:.2}", if j == 0 { "M" } else { " L" }, frame.px(x), frame.py(y));
        }
        let _ = writeln!(
            svg,
            r#"<path d="{d}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            PALETTE[k % PALETTE.len()]
        );
    }
    legend(&mut svg, &series.iter().map(|s| s.name.as_str()).collect::<Vec<_>>());
    svg.push_str("</svg>\n");
    svg
}

pub fn bar_chart(title: &str, x_label: &str, y_label: &str, bars: &[Bars]) -> String {
    let edges = bars.iter().flat_map(|b| b.bins.iter());
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for &(l, r, h) in edges {
        x0 = x0.min(l);
        x1 = x1.max(r);
        y1 = y1.max(h);
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    let frame = Frame::new(x0, x1, 0.0, y1);
    let mut svg = String::new();
    open(&mut svg, title, &frame, x_label, y_label);
    for (k, b) in bars.iter().enumerate() {
        for &(l, r, h) in &b.bins {
            if h <= 0.0 {
                continue;
            }
            let (pl, pr, pt, pb) = (frame.px(l), frame.px(r), frame.py(h), frame.py(0.0));
            let _ = writeln!(
                svg,
                r#"<rect x="{pl:.2}" y="{pt:.2}" width="{:.2}" height="{:.2}" fill="{}" fill-opacity="0.6"/>"#,
                pr - pl,
                pb - pt,
                PALETTE[k % PALETTE.len()]
            );
        }
    }
    legend(&mut svg, &bars.iter().map(|b| b.name.as_str()).collect::<Vec<_>>());
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{cell, Provenance};

    #[test]
    fn histogram_edges() {
        let h = histogram(&[-1.0, -0.95, 0.0, 1.0], -1.0, 1.0, 4);
        assert_eq!(h.iter().map(|b| b.2).collect::<Vec<_>>(), vec![2.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn line_chart_has_one_path_per_series() {
        let mut t = Table::new(Provenance::new("baselines/1", None, None), &["epoch", "a", "b"]);
        t.push(vec![cell(1), cell(0.5), None]);
        t.push(vec![cell(2), cell(0.7), cell(0.1)]);
        let svg = render_table(&t).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<path d=\"M").count(), 3);
    }

    #[test]
    fn ecs_is_a_bar_chart() {
        let mut t = Table::new(Provenance::new("ecs/1", None, None), &["k", "count"]);
        t.push(vec![cell(1), cell(5)]);
        t.push(vec![cell(2), cell(0)]);
        let svg = render_table(&t).unwrap();
        assert_eq!(svg.matches("fill-opacity").count(), 1);
    }
}

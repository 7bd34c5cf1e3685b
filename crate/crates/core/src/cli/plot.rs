//! Static SVG line chart of mean sin-theta distance per method.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::cli::matrix_io::fmt_f64;
use crate::simlab::ResultRow;
use crate::solvers::Method;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;

const PALETTE: [&str; 7] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#000000", "#8c564b"];

/// Mean sin-theta of one method at one sweep value.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub value: f64,
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub method: Method,
    pub points: Vec<SeriesPoint>,
}

/// Groups rows by method (first-appearance order) and value (ascending),
/// averaging the rows that carry a sin-theta value.
pub fn aggregate(rows: &[ResultRow]) -> Vec<Series> {
    let mut order: Vec<Method> = Vec::new();
    let mut sums: BTreeMap<(usize, u64), (f64, f64, usize)> = BTreeMap::new();
    for row in rows {
        let Some(s) = row.sin_theta else { continue };
        let mi = match order.iter().position(|&m| m == row.method) {
            Some(i) => i,
            None => {
                order.push(row.method);
                order.len() - 1
            }
        };
        // total order on finite values; negative values sort before positive
        let key = (mi, ordered_bits(row.value));
        let e = sums.entry(key).or_insert((row.value, 0.0, 0));
        e.1 += s;
        e.2 += 1;
    }
    order
        .iter()
        .enumerate()
        .map(|(mi, &method)| Series {
            method,
            points: sums
                .range((mi, 0)..=(mi, u64::MAX))
                .map(|(_, &(value, sum, count))| SeriesPoint {
                    value,
                    mean: sum / count as f64,
                    count,
                })
                .collect(),
        })
        .collect()
}

fn ordered_bits(v: f64) -> u64 {
    let b = v.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

/// Renders the chart. `param` labels the x axis.
pub fn render_svg(series: &[Series], param: &str) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.value));
    let (xmin, xmax) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (xmin, xmax) = if xmin < xmax { (xmin, xmax) } else { (xmin - 1.0, xmin + 1.0) };
    let ymax = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.mean))
        .fold(1.0_f64, f64::max);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - xmin) / (xmax - xmin) * plot_w;
    let py = |y: f64| TOP + (1.0 - y / ymax) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);

    // axes and ticks
    let (x0, y0, x1, y1) = (LEFT, TOP + plot_h, LEFT + plot_w, TOP);
    let _ = writeln!(svg, r#"<g class="axes" stroke="black" fill="none">"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r#"<g class="ticks" fill="black">"#);
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let xv = xmin + t * (xmax - xmin);
        let yv = t * ymax;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            px(xv),
            y0 + 18.0,
            tick_label(xv)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            py(yv) + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0,
        escape(param)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">mean sin-theta distance</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let name = escape(s.method.acronym());
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.value), py(p.mean)))
            .collect();
        let _ = writeln!(svg, r#"<g class="series" data-method="{}">"#, s.method.tag());
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        for p in &s.points {
            let mean = fmt_f64(p.mean);
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}" data-value="{}" data-mean="{mean}" data-n="{}"><title>{name} {}={}: mean {mean} (n={})</title></circle>"#,
                px(p.value),
                py(p.mean),
                p.value,
                p.count,
                escape(param),
                p.value,
                p.count
            );
        }
        let _ = writeln!(svg, "</g>");
    }

    let _ = writeln!(svg, r#"<g class="legend">"#);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = TOP + 10.0 + 20.0 * i as f64;
        let lx = WIDTH - RIGHT + 20.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/><text class="legend-entry" x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            y + 4.0,
            escape(s.method.acronym())
        );
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: Method, value: f64, s: Option<f64>) -> ResultRow {
        ResultRow {
            method,
            param: "n".into(),
            value,
            replicate: 0,
            sin_theta: s,
            wall_ms: None,
            status: "ok".into(),
        }
    }

    #[test]
    fn aggregate_groups_and_sorts() {
        let rows = vec![
            row(Method::Rmtfa, 400.0, Some(0.2)),
            row(Method::Svd, 400.0, Some(0.5)),
            row(Method::Rmtfa, 100.0, Some(0.4)),
            row(Method::Rmtfa, 400.0, Some(0.3)),
            row(Method::Rmtfa, 100.0, None),
        ];
        let s = aggregate(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].method, Method::Rmtfa);
        assert_eq!(s[0].points.iter().map(|p| p.value).collect::<Vec<_>>(), vec![100.0, 400.0]);
        assert_eq!(s[0].points[0].count, 1);
        assert!((s[0].points[1].mean - 0.25).abs() < 1e-15);
        assert_eq!(s[1].points.len(), 1);
    }

    #[test]
    fn ordered_bits_monotone() {
        let v = [-3.0, -0.5, 0.0, 1e-300, 2.0, 100.0];
        for w in v.windows(2) {
            assert!(ordered_bits(w[0]) < ordered_bits(w[1]));
        }
    }

    #[test]
    fn svg_structure() {
        let rows = vec![row(Method::HpcaPlus, 1.0, Some(0.1)), row(Method::HpcaPlus, 2.0, Some(0.2))];
        let svg = render_svg(&aggregate(&rows), "n");
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains(">HPCA+</text>"));
        assert!(svg.contains(r#"version="1.1""#));
    }

    #[test]
    fn single_value_does_not_divide_by_zero() {
        let svg = render_svg(&aggregate(&[row(Method::Dd, 5.0, Some(0.9))]), "p");
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}

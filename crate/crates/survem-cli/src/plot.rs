//! Minimal log-log SVG plots: one polyline with markers per series,
//! optional least-squares fit lines, and reference slope triangles.

use std::fmt::Write as _;

/// A fitted line in log10-log10 coordinates.
#[derive(Debug, Clone, Copy)]
pub struct FitLine {
    pub slope: f64,
    pub intercept: f64,
    pub log_x_range: (f64, f64),
}

/// One plotted curve: data points in natural (not log) coordinates.
#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub fit: Option<FitLine>,
}

pub struct SvgPlot<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub series: &'a [PlotSeries],
    /// Slopes to draw as small reference triangles along the data.
    pub reference_slopes: &'a [f64],
}

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 560.0;
const MARGIN_LEFT: f64 = 78.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 46.0;
const MARGIN_BOTTOM: f64 = 64.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

struct Axes {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Axes {
    fn x_px(&self, log_x: f64) -> f64 {
        let w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        MARGIN_LEFT + (log_x - self.x_min) / (self.x_max - self.x_min) * w
    }

    fn y_px(&self, log_y: f64) -> f64 {
        let h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        MARGIN_TOP + (self.y_max - log_y) / (self.y_max - self.y_min) * h
    }
}

fn decade_ticks(lo: f64, hi: f64) -> Vec<i32> {
    let first = lo.ceil() as i32;
    let last = hi.floor() as i32;
    (first..=last).collect()
}

fn marker(out: &mut String, shape: usize, x: f64, y: f64, color: &str) {
    match shape % 4 {
        0 => {
            let _ = write!(out, r##"<circle cx="{x:.2}" cy="{y:.2}" r="3.6" fill="{color}"/>"##);
        }
        1 => {
            let _ = write!(
                out,
                r##"<rect x="{:.2}" y="{:.2}" width="6.4" height="6.4" fill="{color}"/>"##,
                x - 3.2,
                y - 3.2
            );
        }
        2 => {
            let _ = write!(
                out,
                r##"<path d="M {:.2} {:.2} L {:.2} {:.2} L {:.2} {:.2} L {:.2} {:.2} Z" fill="{color}"/>"##,
                x,
                y - 4.4,
                x + 4.4,
                y,
                x,
                y + 4.4,
                x - 4.4,
                y
            );
        }
        _ => {
            let _ = write!(
                out,
                r##"<path d="M {:.2} {:.2} L {:.2} {:.2} L {:.2} {:.2} Z" fill="{color}"/>"##,
                x,
                y - 4.4,
                x + 4.0,
                y + 3.4,
                x - 4.0,
                y + 3.4
            );
        }
    }
    out.push('\n');
}

impl SvgPlot<'_> {
    pub fn render(&self) -> String {
        let mut logs: Vec<(f64, f64)> = Vec::new();
        for s in self.series {
            for &(x, y) in &s.points {
                if x > 0.0 && y > 0.0 {
                    logs.push((x.log10(), y.log10()));
                }
            }
        }
        if logs.is_empty() {
            logs.push((0.0, 0.0));
        }
        let pad = 0.25;
        let axes = Axes {
            x_min: logs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) - pad,
            x_max: logs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) + pad,
            y_min: logs.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) - pad - 0.55,
            y_max: logs.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) + pad,
        };

        let mut out = String::new();
        let _ = writeln!(
            out,
            r##"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"##
        );
        let _ = writeln!(out, r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"##);
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="26" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"##,
            WIDTH / 2.0,
            escape(self.title)
        );

        self.draw_grid(&mut out, &axes);
        self.draw_reference_triangles(&mut out, &axes);

        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            if let Some(fit) = s.fit {
                let (x0, x1) = fit.log_x_range;
                let (ex0, ex1) = (x0 - 0.08, x1 + 0.08);
                let _ = writeln!(
                    out,
                    r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1.1" stroke-dasharray="6 4" opacity="0.85"/>"##,
                    axes.x_px(ex0),
                    axes.y_px(fit.slope * ex0 + fit.intercept),
                    axes.x_px(ex1),
                    axes.y_px(fit.slope * ex1 + fit.intercept),
                );
            }
            let mut path = String::new();
            for (j, &(x, y)) in s.points.iter().filter(|&&(x, y)| x > 0.0 && y > 0.0).enumerate() {
                let px = axes.x_px(x.log10());
                let py = axes.y_px(y.log10());
                let _ = write!(path, "{}{px:.2} {py:.2}", if j == 0 { "M " } else { " L " });
            }
            let _ = writeln!(
                out,
                r##"<path d="{path}" fill="none" stroke="{color}" stroke-width="1.8"/>"##
            );
            for &(x, y) in s.points.iter().filter(|&&(x, y)| x > 0.0 && y > 0.0) {
                marker(&mut out, i, axes.x_px(x.log10()), axes.y_px(y.log10()), color);
            }
        }

        self.draw_legend(&mut out);
        let _ = writeln!(out, "</svg>");
        out
    }

    fn draw_grid(&self, out: &mut String, axes: &Axes) {
        let (px0, px1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
        let (py0, py1) = (MARGIN_TOP, HEIGHT - MARGIN_BOTTOM);
        for d in decade_ticks(axes.x_min, axes.x_max) {
            let x = axes.x_px(d as f64);
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{py0}" x2="{x:.2}" y2="{py1}" stroke="#dddddd" stroke-width="0.8"/>"##
            );
            let _ = writeln!(
                out,
                r##"<text x="{x:.2}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">1e{d}</text>"##,
                py1 + 18.0
            );
        }
        for d in decade_ticks(axes.y_min, axes.y_max) {
            let y = axes.y_px(d as f64);
            let _ = writeln!(
                out,
                r##"<line x1="{px0}" y1="{y:.2}" x2="{px1}" y2="{y:.2}" stroke="#dddddd" stroke-width="0.8"/>"##
            );
            let _ = writeln!(
                out,
                r##"<text x="{:.1}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="end">1e{d}</text>"##,
                px0 - 8.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            out,
            r##"<rect x="{px0}" y="{py0}" width="{:.1}" height="{:.1}" fill="none" stroke="#333333" stroke-width="1.2"/>"##,
            px1 - px0,
            py1 - py0
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"##,
            (px0 + px1) / 2.0,
            HEIGHT - 16.0,
            escape(self.x_label)
        );
        let _ = writeln!(
            out,
            r##"<text x="20" y="{:.1}" font-family="sans-serif" font-size="14" text-anchor="middle" transform="rotate(-90 20 {:.1})">{}</text>"##,
            (py0 + py1) / 2.0,
            (py0 + py1) / 2.0,
            escape(self.y_label)
        );
    }

    /// Small right triangles showing the expected slopes, anchored under the
    /// lower-left corner of the data cloud.
    fn draw_reference_triangles(&self, out: &mut String, axes: &Axes) {
        if self.reference_slopes.is_empty() {
            return;
        }
        let run = 0.28;
        let base_x = axes.x_min + 0.45;
        for (i, &slope) in self.reference_slopes.iter().enumerate() {
            let x0 = base_x + i as f64 * (run + 0.18);
            let y0 = axes.y_min + 0.18;
            if x0 + run > axes.x_max {
                break;
            }
            let (px0, py0) = (axes.x_px(x0), axes.y_px(y0));
            let (px1, py1) = (axes.x_px(x0 + run), axes.y_px(y0 + slope * run));
            let _ = writeln!(
                out,
                r##"<path d="M {px0:.2} {py0:.2} L {px1:.2} {py0:.2} L {px1:.2} {py1:.2} Z" fill="none" stroke="#888888" stroke-width="1.0"/>"##
            );
            let _ = writeln!(
                out,
                r##"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" fill="#666666" text-anchor="start">{}</text>"##,
                px1 + 4.0,
                (py0 + py1) / 2.0 + 4.0,
                trim_number(slope)
            );
        }
    }

    fn draw_legend(&self, out: &mut String) {
        let x = MARGIN_LEFT + 14.0;
        let mut y = MARGIN_TOP + 18.0;
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let _ = writeln!(
                out,
                r##"<line x1="{x}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="1.8"/>"##,
                y - 4.0,
                x + 26.0,
                y - 4.0
            );
            marker(out, i, x + 13.0, y - 4.0, color);
            let label = match s.fit {
                Some(fit) => format!("{} (slope {:.2})", s.label, fit.slope),
                None => s.label.clone(),
            };
            let _ = writeln!(
                out,
                r##"<text x="{:.1}" y="{y:.1}" font-family="sans-serif" font-size="12">{}</text>"##,
                x + 34.0,
                escape(&label)
            );
            y += 18.0;
        }
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn trim_number(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_series() -> Vec<PlotSeries> {
        vec![
            PlotSeries {
                label: "k=1".into(),
                points: vec![(0.2, 1e-2), (0.1, 2.5e-3), (0.05, 6.2e-4)],
                fit: Some(FitLine { slope: 2.0, intercept: -0.6, log_x_range: (-1.3, -0.7) }),
            },
            PlotSeries {
                label: "k=2".into(),
                points: vec![(0.2, 1e-3), (0.1, 1.2e-4), (0.05, 1.6e-5)],
                fit: None,
            },
        ]
    }

    #[test]
    fn rendered_svg_is_well_formed_and_contains_everything() {
        let series = sample_series();
        let svg = SvgPlot {
            title: "demo",
            x_label: "mesh size h",
            y_label: "L2 error",
            series: &series,
            reference_slopes: &[2.0, 3.0],
        }
        .render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("k=1 (slope 2.00)"));
        assert!(svg.contains("k=2"));
        assert!(svg.contains("mesh size h"));
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.matches("<circle").count() >= 3);
        for tag in ["<svg", "<rect", "<line", "<circle", "<path", "<text"] {
            let opens = svg.matches(tag).count();
            assert!(opens > 0, "missing {tag}");
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let series = sample_series();
        let plot = SvgPlot {
            title: "demo",
            x_label: "h",
            y_label: "err",
            series: &series,
            reference_slopes: &[1.0],
        };
        assert_eq!(plot.render(), plot.render());
    }

    #[test]
    fn labels_are_xml_escaped() {
        let series = vec![PlotSeries {
            label: "a<b & c".into(),
            points: vec![(0.1, 0.1), (0.05, 0.05)],
            fit: None,
        }];
        let svg = SvgPlot {
            title: "t",
            x_label: "x",
            y_label: "y",
            series: &series,
            reference_slopes: &[],
        }
        .render();
        assert!(svg.contains("a&lt;b &amp; c"));
        assert!(!svg.contains("a<b"));
    }
}

//! Minimal SVG line/band/scatter charts.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub fn colour(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

#[derive(Clone, Debug)]
pub enum Layer {
    Line { label: String, colour: &'static str, xs: Vec<f64>, ys: Vec<f64> },
    Band { colour: &'static str, xs: Vec<f64>, lower: Vec<f64>, upper: Vec<f64> },
    Points { colour: &'static str, xs: Vec<f64>, ys: Vec<f64> },
}

#[derive(Clone, Debug)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub layers: Vec<Layer>,
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Figure {
    fn x_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| match l {
            Layer::Line { xs, .. } | Layer::Band { xs, .. } | Layer::Points { xs, .. } => xs.iter().copied(),
        })
    }

    fn y_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| -> Box<dyn Iterator<Item = f64> + '_> {
            match l {
                Layer::Line { ys, .. } | Layer::Points { ys, .. } => Box::new(ys.iter().copied()),
                Layer::Band { lower, upper, .. } => Box::new(lower.iter().chain(upper).copied()),
            }
        })
    }

    pub fn render(&self) -> String {
        let (x0, x1) = extent(self.x_values());
        let (y0, y1) = extent(self.y_values());
        let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
        let path = |xs: &[f64], ys: &[f64]| {
            xs.iter()
                .zip(ys)
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
                .collect::<Vec<_>>()
                .join(" ")
        };

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(&self.title));
        let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(s, r#"<path d="M{left},{top} L{left},{bottom} L{right},{bottom}" fill="none" stroke="black"/>"#);
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{:.3}</text>"#, px(xv), bottom + 16.0, xv);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{:.3}</text>"#, left - 6.0, py(yv) + 4.0, yv);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 15.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        );

        let mut legend = 0;
        for layer in &self.layers {
            match layer {
                Layer::Band { colour, xs, lower, upper } => {
                    let mut pts = path(xs, upper);
                    let rev_x: Vec<f64> = xs.iter().rev().copied().collect();
                    let rev_l: Vec<f64> = lower.iter().rev().copied().collect();
                    pts.push(' ');
                    pts.push_str(&path(&rev_x, &rev_l));
                    let _ = writeln!(s, r#"<polygon points="{}" fill="{colour}" fill-opacity="0.2" stroke="none"/>"#, pts.trim());
                }
                Layer::Line { label, colour, xs, ys } => {
                    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#, path(xs, ys));
                    let ly = MARGIN + 14.0 * legend as f64;
                    let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#, right - 110.0, right - 90.0);
                    let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, right - 85.0, ly + 4.0, escape(label));
                    legend += 1;
                }
                Layer::Points { colour, xs, ys } => {
                    for (x, y) in xs.iter().zip(ys).filter(|(x, y)| x.is_finite() && y.is_finite()) {
                        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="{colour}" fill-opacity="0.5"/>"#, px(*x), py(*y));
                    }
                }
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

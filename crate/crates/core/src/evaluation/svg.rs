//! Minimal line and bar charts as standalone SVG documents.
//!
//! Output is a pure function of the input: fixed canvas, fixed number
//! formatting, no timestamps.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scale {
    Linear,
    Log10,
}

#[derive(Clone, Copy, Debug)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub scale: Scale,
}

impl Axis {
    pub fn linear(min: f64, max: f64) -> Self {
        Self { min, max, scale: Scale::Linear }
    }

    pub fn log(min: f64, max: f64) -> Self {
        Self { min, max, scale: Scale::Log10 }
    }

    fn fraction(&self, v: f64) -> Option<f64> {
        match self.scale {
            Scale::Linear => Some((v - self.min) / (self.max - self.min)),
            Scale::Log10 if v > 0.0 => {
                Some((v.log10() - self.min.log10()) / (self.max.log10() - self.min.log10()))
            }
            Scale::Log10 => None,
        }
    }

    fn ticks(&self) -> Vec<f64> {
        match self.scale {
            Scale::Linear => (0..=5).map(|i| self.min + (self.max - self.min) * i as f64 / 5.0).collect(),
            Scale::Log10 => {
                let lo = self.min.log10().ceil() as i32;
                let hi = self.max.log10().floor() as i32;
                (lo..=hi).map(|e| 10f64.powi(e)).collect()
            }
        }
    }

    fn label(&self, v: f64) -> String {
        match self.scale {
            Scale::Linear => format!("{v:.2}"),
            Scale::Log10 => format!("1e{}", v.log10().round() as i32),
        }
    }
}

pub enum Series {
    /// Connected points; points off a log axis break the line.
    Line { name: String, color: &'static str, points: Vec<(f64, f64)> },
    /// Bars from the bottom of the plot, one per `(start, end, height)`.
    Bars { name: String, color: &'static str, bars: Vec<(f64, f64, f64)> },
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x: Axis,
    pub y: Axis,
    pub series: Vec<Series>,
}

impl Chart {
    fn px(&self, x: f64) -> Option<f64> {
        self.x.fraction(x).map(|f| LEFT + f.clamp(0.0, 1.0) * (WIDTH - LEFT - RIGHT))
    }

    fn py(&self, y: f64) -> Option<f64> {
        self.y.fraction(y).map(|f| HEIGHT - BOTTOM - f.clamp(0.0, 1.0) * (HEIGHT - TOP - BOTTOM))
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let (x0, x1) = (LEFT, WIDTH - RIGHT);
        let (y0, y1) = (HEIGHT - BOTTOM, TOP);
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y0 - y1
        );
        for t in self.x.ticks() {
            if let Some(px) = self.px(t) {
                let _ = writeln!(s, r#"<line x1="{px:.1}" y1="{y0:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/>"#, y0 + 5.0);
                let _ = writeln!(
                    s,
                    r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                    y0 + 18.0,
                    self.x.label(t)
                );
            }
        }
        for t in self.y.ticks() {
            if let Some(py) = self.py(t) {
                let _ = writeln!(s, r#"<line x1="{:.1}" y1="{py:.1}" x2="{x0:.1}" y2="{py:.1}" stroke="black"/>"#, x0 - 5.0);
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                    x0 - 8.0,
                    py + 4.0,
                    self.y.label(t)
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(&self.y_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let (name, color) = match series {
                Series::Line { name, color, points } => {
                    self.polyline(&mut s, points, color);
                    (name, *color)
                }
                Series::Bars { name, color, bars } => {
                    self.bars(&mut s, bars, color);
                    (name, *color)
                }
            };
            let ly = y1 + 16.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="12" height="4" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                x1 - 150.0,
                ly - 6.0,
                x1 - 132.0,
                ly,
                escape(name)
            );
        }
        s.push_str("</svg>\n");
        s
    }

    fn polyline(&self, s: &mut String, points: &[(f64, f64)], color: &str) {
        let mut run: Vec<(f64, f64)> = Vec::new();
        let flush = |run: &mut Vec<(f64, f64)>, s: &mut String| {
            if run.len() > 1 {
                let pts: Vec<String> = run.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    pts.join(" ")
                );
            }
            run.clear();
        };
        for &(x, y) in points {
            match (self.px(x), self.py(y)) {
                (Some(px), Some(py)) => run.push((px, py)),
                _ => flush(&mut run, s),
            }
        }
        flush(&mut run, s);
    }

    fn bars(&self, s: &mut String, bars: &[(f64, f64, f64)], color: &str) {
        let base = HEIGHT - BOTTOM;
        for &(start, end, h) in bars {
            let (Some(xa), Some(xb), Some(py)) = (self.px(start), self.px(end), self.py(h)) else {
                continue;
            };
            if py >= base {
                continue;
            }
            let _ = writeln!(
                s,
                r#"<rect x="{xa:.2}" y="{py:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.6"/>"#,
                (xb - xa).max(0.5),
                base - py
            );
        }
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

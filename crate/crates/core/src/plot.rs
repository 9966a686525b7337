//! Minimal self-contained SVG line and box plots.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log10,
}

impl Scale {
    fn apply(self, v: f64) -> f64 {
        match self {
            Scale::Linear => v,
            Scale::Log10 => v.log10(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Optional `(x, low, high)` band drawn behind the line.
    pub band: Vec<(f64, f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), points, band: Vec::new() }
    }
}

#[derive(Debug, Clone)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_scale: Scale,
    pub y_scale: Scale,
    pub series: Vec<Series>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let fin = |it: &mut dyn Iterator<Item = f64>| {
            it.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
        };
        let (mut x0, mut x1) = fin(&mut xs.clone());
        let (mut y0, mut y1) = fin(&mut ys.clone());
        if !x0.is_finite() {
            (x0, x1) = (0.0, 1.0);
        }
        if !y0.is_finite() {
            (y0, y1) = (0.0, 1.0);
        }
        if x1 - x0 < 1e-300 {
            (x0, x1) = (x0 - 0.5, x1 + 0.5);
        }
        if y1 - y0 < 1e-300 {
            (y0, y1) = (y0 - 0.5, y1 + 0.5);
        }
        let pad = 0.05 * (y1 - y0);
        Self { x0, x1, y0: y0 - pad, y1: y1 + pad }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, esc(title));
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str, xs: Scale, ys: Scale) {
    let (bx, by) = (HEIGHT - BOTTOM, LEFT);
    let _ = writeln!(
        out,
        r#"<path d="M{by:.1},{TOP:.1} V{bx:.1} H{:.1}" fill="none" stroke="black"/>"#,
        WIDTH - RIGHT
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = f.x0 + t * (f.x1 - f.x0);
        let yv = f.y0 + t * (f.y1 - f.y0);
        let (px, py) = (f.px(xv), f.py(yv));
        let xt = if xs == Scale::Log10 { format!("1e{xv:.2}") } else { format!("{xv:.3}") };
        let yt = if ys == Scale::Log10 { format!("1e{yv:.2}") } else { format!("{yv:.3}") };
        let _ = writeln!(out, r#"<line x1="{px:.1}" y1="{bx:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/>"#, bx + 4.0);
        let _ = writeln!(out, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{xt}</text>"#, bx + 17.0);
        let _ = writeln!(out, r#"<line x1="{:.1}" y1="{py:.1}" x2="{by:.1}" y2="{py:.1}" stroke="black"/>"#, by - 4.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yt}</text>"#, by - 6.0, py + 4.0);
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        HEIGHT - 12.0,
        esc(x_label)
    );
    let cy = TOP + (HEIGHT - TOP - BOTTOM) / 2.0;
    let _ = writeln!(
        out,
        r#"<text x="16" y="{cy:.1}" text-anchor="middle" transform="rotate(-90 16 {cy:.1})">{}</text>"#,
        esc(y_label)
    );
}

impl LinePlot {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x_scale: Scale::Linear,
            y_scale: Scale::Linear,
            series: Vec::new(),
        }
    }

    pub fn log_x(mut self) -> Self {
        self.x_scale = Scale::Log10;
        self
    }

    pub fn log_y(mut self) -> Self {
        self.y_scale = Scale::Log10;
        self
    }

    pub fn with_series(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    pub fn to_svg(&self) -> String {
        let (xs, ys) = (self.x_scale, self.y_scale);
        let all_x = self.series.iter().flat_map(|s| s.points.iter().map(move |p| xs.apply(p.0)));
        let all_y = self.series.iter().flat_map(|s| {
            s.points.iter().map(move |p| ys.apply(p.1)).chain(s.band.iter().flat_map(move |b| [ys.apply(b.1), ys.apply(b.2)]))
        });
        let f = Frame::new(all_x, all_y);
        let mut out = String::new();
        header(&mut out, &self.title);
        axes(&mut out, &f, &self.x_label, &self.y_label, xs, ys);
        for (i, s) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let band: Vec<_> = s.band.iter().filter(|b| ys.apply(b.1).is_finite() && ys.apply(b.2).is_finite()).collect();
            if band.len() > 1 {
                let mut d = String::new();
                for (k, b) in band.iter().enumerate() {
                    let _ = write!(d, "{}{:.2},{:.2} ", if k == 0 { "M" } else { "L" }, f.px(xs.apply(b.0)), f.py(ys.apply(b.2)));
                }
                for b in band.iter().rev() {
                    let _ = write!(d, "L{:.2},{:.2} ", f.px(xs.apply(b.0)), f.py(ys.apply(b.1)));
                }
                let _ = writeln!(out, r#"<path d="{}Z" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, d);
            }
            let pts: Vec<(f64, f64)> = s
                .points
                .iter()
                .map(|p| (xs.apply(p.0), ys.apply(p.1)))
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .collect();
            if !pts.is_empty() {
                let d: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", f.px(p.0), f.py(p.1))).collect();
                let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.join(" "));
                if pts.len() <= 40 {
                    for p in &pts {
                        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, f.px(p.0), f.py(p.1));
                    }
                }
            }
            let ly = TOP + 16.0 * i as f64;
            let lx = WIDTH - RIGHT + 12.0;
            let _ = writeln!(out, r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
            let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 22.0, ly + 4.0, esc(&s.label));
        }
        out.push_str("</svg>\n");
        out
    }
}

/// One box per group, drawn from the five-number summary.
#[derive(Debug, Clone)]
pub struct BoxPlot {
    pub title: String,
    pub y_label: String,
    pub y_scale: Scale,
    pub groups: Vec<(String, Vec<f64>)>,
}

impl BoxPlot {
    pub fn new(title: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self { title: title.into(), y_label: y_label.into(), y_scale: Scale::Linear, groups: Vec::new() }
    }

    pub fn log_y(mut self) -> Self {
        self.y_scale = Scale::Log10;
        self
    }

    pub fn with_group(mut self, label: impl Into<String>, values: Vec<f64>) -> Self {
        self.groups.push((label.into(), values));
        self
    }

    pub fn to_svg(&self) -> String {
        let ys = self.y_scale;
        let cleaned: Vec<(String, Vec<f64>)> = self
            .groups
            .iter()
            .map(|(l, v)| {
                let mut v: Vec<f64> = v.iter().map(|x| ys.apply(*x)).filter(|x| x.is_finite()).collect();
                v.sort_by(f64::total_cmp);
                (l.clone(), v)
            })
            .collect();
        let k = cleaned.len().max(1) as f64;
        let f = Frame::new([0.0, k].into_iter(), cleaned.iter().flat_map(|g| g.1.iter().copied()));
        let mut out = String::new();
        header(&mut out, &self.title);
        let (bx, by) = (HEIGHT - BOTTOM, LEFT);
        let _ = writeln!(out, r#"<path d="M{by:.1},{TOP:.1} V{bx:.1} H{:.1}" fill="none" stroke="black"/>"#, WIDTH - RIGHT);
        for i in 0..=4 {
            let yv = f.y0 + i as f64 / 4.0 * (f.y1 - f.y0);
            let yt = if ys == Scale::Log10 { format!("1e{yv:.2}") } else { format!("{yv:.3}") };
            let py = f.py(yv);
            let _ = writeln!(out, r#"<line x1="{:.1}" y1="{py:.1}" x2="{by:.1}" y2="{py:.1}" stroke="black"/>"#, by - 4.0);
            let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yt}</text>"#, by - 6.0, py + 4.0);
        }
        let cy = TOP + (HEIGHT - TOP - BOTTOM) / 2.0;
        let _ = writeln!(
            out,
            r#"<text x="16" y="{cy:.1}" text-anchor="middle" transform="rotate(-90 16 {cy:.1})">{}</text>"#,
            esc(&self.y_label)
        );
        for (i, (label, v)) in cleaned.iter().enumerate() {
            let cx = f.px(i as f64 + 0.5);
            let half = 0.3 * (f.px(1.0) - f.px(0.0));
            let color = COLORS[i % COLORS.len()];
            let _ = writeln!(out, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, bx + 17.0, esc(label));
            if v.is_empty() {
                continue;
            }
            let q = |p: f64| crate::stats::quantile_sorted(v, p);
            let (lo, q1, med, q3, hi) = (v[0], q(0.25), q(0.5), q(0.75), v[v.len() - 1]);
            let _ = writeln!(out, r#"<line x1="{cx:.1}" y1="{:.2}" x2="{cx:.1}" y2="{:.2}" stroke="black"/>"#, f.py(lo), f.py(hi));
            let _ = writeln!(
                out,
                r#"<rect x="{:.1}" y="{:.2}" width="{:.1}" height="{:.2}" fill="{color}" fill-opacity="0.35" stroke="black"/>"#,
                cx - half,
                f.py(q3),
                2.0 * half,
                (f.py(q1) - f.py(q3)).max(0.5)
            );
            let _ = writeln!(
                out,
                r#"<line x1="{:.1}" y1="{:.2}" x2="{:.1}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
                cx - half,
                f.py(med),
                cx + half,
                f.py(med)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(svg: &str) -> bool {
        svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>") && svg.matches("<svg").count() == 1
    }

    #[test]
    fn line_plot_is_well_formed() {
        let p = LinePlot::new("a < b", "n", "AMSE")
            .log_y()
            .with_series(Series::new("gpi", vec![(200.0, 1e-3), (500.0, 5e-4), (1000.0, 2e-4)]));
        let svg = p.to_svg();
        assert!(balanced(&svg));
        assert!(svg.contains("a &lt; b"));
        assert!(svg.contains("<polyline"));
        assert_eq!(svg, p.to_svg());
    }

    #[test]
    fn degenerate_inputs_do_not_panic() {
        let svg = LinePlot::new("t", "x", "y").with_series(Series::new("s", vec![(1.0, 0.0)])).log_y().to_svg();
        assert!(balanced(&svg));
        let svg = BoxPlot::new("b", "y").with_group("a", vec![]).with_group("b", vec![1.0, 2.0, 3.0]).to_svg();
        assert!(balanced(&svg) && svg.contains("<rect x"));
    }
}

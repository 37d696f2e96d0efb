//! Forest plot rendered as plain SVG text.
//!
//! Layout (pixels): rows are `ROW_HEIGHT` apart below a `HEADER` band, labels
//! sit in a `LABEL_WIDTH` column, and the axis spans `PLOT_LEFT..PLOT_RIGHT`.
//! Ratio scales use a log axis.

use std::fmt::Write as _;

use subgroup_shrink::standardize::{EffectScale, ForestRow};

pub const WIDTH: f64 = 760.0;
pub const LABEL_WIDTH: f64 = 230.0;
pub const PLOT_LEFT: f64 = 250.0;
pub const PLOT_RIGHT: f64 = 730.0;
pub const ROW_HEIGHT: f64 = 24.0;
pub const HEADER: f64 = 56.0;
pub const FOOTER: f64 = 44.0;
const WARNING_LINE: f64 = 16.0;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Maps effect values to x coordinates.
struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn new(rows: &[ForestRow], scale: EffectScale) -> Self {
        let log = scale.is_ratio();
        let t = |v: f64| if log { v.ln() } else { v };
        let null = t(scale.null_value());
        let (mut lo, mut hi) = (null, null);
        for r in rows {
            for v in [r.point, r.lower, r.upper] {
                if v.is_finite() && (!log || v > 0.0) {
                    lo = lo.min(t(v));
                    hi = hi.max(t(v));
                }
            }
        }
        if hi - lo < 1e-9 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        Self {
            log,
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn x(&self, v: f64) -> f64 {
        let t = if self.log {
            if v > 0.0 {
                v.ln()
            } else {
                f64::NEG_INFINITY
            }
        } else {
            v
        };
        let t = if t.is_nan() {
            self.lo
        } else {
            t.clamp(self.lo, self.hi)
        };
        PLOT_LEFT + (t - self.lo) / (self.hi - self.lo) * (PLOT_RIGHT - PLOT_LEFT)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            const CANDIDATES: [f64; 15] = [
                0.05, 0.1, 0.2, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 3.0, 4.0, 5.0, 10.0, 20.0,
            ];
            let inside: Vec<f64> = CANDIDATES
                .iter()
                .copied()
                .filter(|v| (self.lo..=self.hi).contains(&v.ln()))
                .collect();
            // Thin to at most seven labels.
            let step = inside.len().div_ceil(7).max(1);
            inside.into_iter().step_by(step).collect()
        } else {
            let raw = (self.hi - self.lo) / 5.0;
            let mag = 10f64.powf(raw.log10().floor());
            let step = [1.0, 2.0, 2.5, 5.0, 10.0]
                .iter()
                .map(|m| m * mag)
                .find(|s| *s >= raw)
                .unwrap_or(10.0 * mag);
            let mut v = (self.lo / step).ceil() * step;
            let mut out = Vec::new();
            while v <= self.hi + 1e-12 {
                out.push(if v.abs() < 1e-12 { 0.0 } else { v });
                v += step;
            }
            out
        }
    }
}

fn fmt_num(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "NA".into()
        } else if v > 0.0 {
            "Inf".into()
        } else {
            "-Inf".into()
        };
    }
    format!("{v:.2}")
}

/// Renders one forest plot: a `<g class="row">` per table row, a dashed
/// reference line at the no-effect value, and optional warnings at the top.
pub fn forest_svg(title: &str, rows: &[ForestRow], warnings: &[String]) -> String {
    let scale = rows
        .first()
        .map_or(EffectScale::MeanDifference, |r| r.scale);
    let axis = Axis::new(rows, scale);
    let top = HEADER + WARNING_LINE * warnings.len() as f64;
    let height = top + ROW_HEIGHT * rows.len() as f64 + FOOTER;
    let bottom = top + ROW_HEIGHT * rows.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text class="title" x="10" y="22" font-size="15" font-weight="bold">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="{PLOT_RIGHT}" y="22" text-anchor="end">{} [{}]</text>"#,
        escape(scale.as_str()),
        if axis.log {
            "log scale"
        } else {
            "linear scale"
        }
    );
    if !warnings.is_empty() {
        let _ = writeln!(s, r##"<g class="warnings" fill="#b00020">"##);
        for (i, w) in warnings.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="10" y="{:.1}">WARNING: {}</text>"#,
                HEADER - 12.0 + WARNING_LINE * (i as f64 + 1.0),
                escape(w)
            );
        }
        let _ = writeln!(s, "</g>");
    }
    let x0 = axis.x(scale.null_value());
    let _ = writeln!(
        s,
        r##"<line class="reference" x1="{x0:.2}" y1="{:.2}" x2="{x0:.2}" y2="{bottom:.2}" stroke="#555" stroke-dasharray="4 3"/>"##,
        top - 6.0
    );
    for (i, r) in rows.iter().enumerate() {
        let y = top + ROW_HEIGHT * (i as f64 + 0.5);
        let (xl, xu, xp) = (axis.x(r.lower), axis.x(r.upper), axis.x(r.point));
        let _ = writeln!(
            s,
            r#"<g class="row" data-subgroup="{}">"#,
            escape(&r.subgroup)
        );
        let _ = writeln!(
            s,
            r#"<text x="10" y="{:.2}">{} (n={})</text>"#,
            y + 4.0,
            escape(&r.subgroup),
            r.n
        );
        let _ = writeln!(
            s,
            r#"<text x="{LABEL_WIDTH}" y="{:.2}" text-anchor="end" font-size="10">{} ({}, {})</text>"#,
            y + 4.0,
            fmt_num(r.point),
            fmt_num(r.lower),
            fmt_num(r.upper)
        );
        if r.lower.is_nan() || r.upper.is_nan() {
            let _ = writeln!(s, r#"<g class="marker" data-missing="true"/>"#);
        } else {
            let _ = writeln!(
                s,
                r#"<g class="marker"><line x1="{xl:.2}" y1="{y:.2}" x2="{xu:.2}" y2="{y:.2}" stroke="black"/><rect x="{:.2}" y="{:.2}" width="8" height="8" fill="{}"/></g>"#,
                xp - 4.0,
                y - 4.0,
                if i == 0 { "#1f4e79" } else { "black" }
            );
        }
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(
        s,
        r#"<g class="axis"><line x1="{PLOT_LEFT}" y1="{bottom:.2}" x2="{PLOT_RIGHT}" y2="{bottom:.2}" stroke="black"/>"#
    );
    for t in axis.ticks() {
        let x = axis.x(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{bottom:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#,
            bottom + 5.0,
            bottom + 18.0,
            if axis.log {
                format!("{t}")
            } else {
                format!("{t:.2}")
            }
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    s
}

//! Minimal SVG line plots rendered straight from CSV text, so a figure can
//! always be regenerated from the table it was drawn from.

use std::fmt::Write;

use anyhow::{anyhow, bail, Result};

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 140.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

#[derive(Debug, Clone)]
pub struct PlotSpec {
    pub title: String,
    pub x_col: String,
    pub y_cols: Vec<String>,
    pub log_x: bool,
    pub log_y: bool,
    pub markers: bool,
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            bail!("nothing to plot");
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil();
        } else {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Ok(Self { lo, hi, log })
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            (self.lo as i32..=self.hi as i32)
                .map(|e| (10f64.powi(e), format!("1e{e}")))
                .collect()
        } else {
            (0..=4)
                .map(|k| {
                    let v = self.lo + (self.hi - self.lo) * k as f64 / 4.0;
                    (v, format!("{v:.3}"))
                })
                .collect()
        }
    }
}

type Table = (Vec<String>, Vec<Vec<Option<f64>>>);

fn parse(csv: &str) -> Result<Table> {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| anyhow!("empty CSV"))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(|c| c.trim().parse::<f64>().ok()).collect())
        .collect();
    Ok((header, rows))
}

/// Render the columns in `spec.y_cols` against `spec.x_col`. Blank or
/// non-numeric cells (and non-positive ones on log axes) are skipped.
pub fn render_csv(csv: &str, spec: &PlotSpec) -> Result<String> {
    let (header, rows) = parse(csv)?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("no column {name}"))
    };
    let xi = col(&spec.x_col)?;
    let usable = |v: f64, log: bool| v.is_finite() && (!log || v > 0.0);
    let mut series = Vec::new();
    for name in &spec.y_cols {
        let yi = col(name)?;
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| Some((r.get(xi).copied().flatten()?, r.get(yi).copied().flatten()?)))
            .filter(|(x, y)| usable(*x, spec.log_x) && usable(*y, spec.log_y))
            .collect();
        series.push((name.clone(), pts));
    }
    let xa = Axis::fit(
        series.iter().flat_map(|s| s.1.iter().map(|p| p.0)),
        spec.log_x,
    )?;
    let ya = Axis::fit(
        series.iter().flat_map(|s| s.1.iter().map(|p| p.1)),
        spec.log_y,
    )?;
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let px = |x: f64| LEFT + xa.frac(x) * pw;
    let py = |y: f64| TOP + (1.0 - ya.frac(y)) * ph;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    )?;
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#)?;
    writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&spec.title)
    )?;
    writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )?;
    for (v, label) in xa.ticks() {
        let x = px(v);
        writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#,
            TOP + ph,
            TOP + ph + 5.0
        )?;
        writeln!(
            s,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">{label}</text>"#,
            TOP + ph + 18.0
        )?;
    }
    for (v, label) in ya.ticks() {
        let y = py(v);
        writeln!(
            s,
            r#"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#,
            LEFT - 5.0
        )?;
        writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#,
            LEFT - 8.0,
            y + 4.0
        )?;
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 12.0,
        escape(&spec.x_col)
    )?;
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        )?;
        if spec.markers {
            for (x, y) in pts {
                writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                    px(*x),
                    py(*y)
                )?;
            }
        }
        let ly = TOP + 16.0 + 18.0 * k as f64;
        let lx = W - RIGHT + 12.0;
        writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        )?;
        writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        )?;
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> PlotSpec {
        PlotSpec {
            title: "t".into(),
            x_col: "B_G".into(),
            y_cols: vec!["T_R_ms".into()],
            log_x: true,
            log_y: true,
            markers: true,
        }
    }

    #[test]
    fn render_is_deterministic_and_skips_blanks() {
        let csv = "B_G,T_R_ms\n1,\n5,0.187\n10,0.0934\n";
        let a = render_csv(csv, &spec()).unwrap();
        assert_eq!(a, render_csv(csv, &spec()).unwrap());
        assert_eq!(a.matches("<circle").count(), 2);
    }

    #[test]
    fn missing_column_is_an_error() {
        assert!(render_csv("a,b\n1,2\n", &spec()).is_err());
    }
}

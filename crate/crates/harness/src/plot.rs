//! SVG curves of egen and erob against width.
//!
//! A panel spec is a comma-separated list of `REGIME[@source][|title]`, where
//! `source` indexes the list of CSV files (default 0).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::warn;
use tradeoff_core::Regime;

use crate::error::{HarnessError, Result};
use crate::results::ResultRow;

#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub regime: Regime,
    pub source: usize,
    pub title: String,
}

pub fn parse_panels(spec: &str) -> Result<Vec<Panel>> {
    spec.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (head, title) = match p.split_once('|') {
                Some((h, t)) => (h.trim(), Some(t.trim().to_string())),
                None => (p.trim(), None),
            };
            let (reg, source) = match head.split_once('@') {
                Some((r, s)) => {
                    (r, s.trim().parse::<usize>().map_err(|_| HarnessError::Parse(format!("bad source index in {p:?}")))?)
                }
                None => (head, 0),
            };
            let regime = Regime::parse(reg).map_err(|e| HarnessError::Parse(e.to_string()))?;
            Ok(Panel { regime, source, title: title.unwrap_or_else(|| regime.tag().to_string()) })
        })
        .collect()
}

/// Mean and standard deviation of a non-empty sample.
fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Per width: (mean, sd) of the measured metric and mean theory.
struct Curve {
    points: Vec<(f64, f64, f64)>,
    theory: Vec<(f64, f64)>,
}

fn curve(rows: &[&ResultRow], measured: impl Fn(&ResultRow) -> Option<f64>, theory: impl Fn(&ResultRow) -> Option<f64>) -> Curve {
    let mut by_m: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let e = by_m.entry(r.m).or_default();
        if let Some(v) = measured(r) {
            e.0.push(v);
        }
        if let Some(t) = theory(r) {
            e.1.push(t);
        }
    }
    let mut points = Vec::new();
    let mut th = Vec::new();
    for (m, (vals, ts)) in by_m {
        if !vals.is_empty() {
            let (mu, sd) = mean_sd(&vals);
            points.push((m as f64, mu, sd));
        }
        if !ts.is_empty() {
            th.push((m as f64, mean_sd(&ts).0));
        }
    }
    Curve { points, theory: th }
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|k| k * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

const W: f64 = 360.0;
const H: f64 = 280.0;
const ML: f64 = 50.0;
const MR: f64 = 15.0;
const MT: f64 = 30.0;
const MB: f64 = 45.0;
const COLORS: [(&str, &str); 2] = [("egen", "#1f77b4"), ("erob", "#d62728")];

/// One SVG with a panel per entry. `None` (with a warning) when nothing matches.
pub fn render(sources: &[Vec<ResultRow>], panels: &[Panel], title: &str) -> Option<String> {
    let mut bodies = Vec::new();
    for p in panels {
        let Some(rows) = sources.get(p.source) else {
            warn!("panel {}: no source {}", p.title, p.source);
            continue;
        };
        let sel: Vec<&ResultRow> = rows.iter().filter(|r| r.regime == p.regime && !r.failed()).collect();
        if sel.is_empty() {
            warn!("panel {}: no {} rows", p.title, p.regime);
            continue;
        }
        let gen = curve(&sel, |r| r.egen_exact.or(r.egen_mc), |r| r.egen_theory);
        let rob = curve(&sel, |r| r.erob_exact.or(r.erob_mc), |r| r.erob_theory);
        bodies.push((p.title.clone(), [gen, rob]));
    }
    if bodies.is_empty() {
        warn!("plot {title}: empty selection, nothing written");
        return None;
    }
    let total_w = W * bodies.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{}" font-family="sans-serif" font-size="11">"#,
        H + 20.0
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, (ptitle, curves)) in bodies.iter().enumerate() {
        let x0 = i as f64 * W;
        panel(&mut s, x0, ptitle, curves);
    }
    // Legend.
    let ly = H + 8.0;
    for (k, (name, color)) in COLORS.iter().enumerate() {
        let lx = 10.0 + 165.0 * k as f64;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{name} (mean, sd band)</text>"#, lx + 25.0, ly + 4.0);
    }
    let lx = 345.0;
    let _ = writeln!(
        s,
        r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="black" stroke-width="1.5" stroke-dasharray="5,3"/>"#,
        lx + 20.0
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}">theory</text>"#, lx + 25.0, ly + 4.0);
    s.push_str("</svg>\n");
    Some(s)
}

fn panel(s: &mut String, x0: f64, title: &str, curves: &[Curve; 2]) {
    let xs: Vec<f64> = curves.iter().flat_map(|c| c.points.iter().map(|p| p.0).chain(c.theory.iter().map(|p| p.0))).collect();
    let ys: Vec<f64> = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.1 + p.2).chain(c.theory.iter().map(|p| p.1)))
        .collect();
    let (mut xlo, mut xhi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &x| (a.0.min(x), a.1.max(x)));
    if xhi - xlo < 1e-9 {
        xlo -= 1.0;
        xhi += 1.0;
    }
    let ylo = 0.0;
    let yhi = ys.iter().copied().fold(1.0_f64, f64::max) * 1.05;
    let pw = W - ML - MR;
    let ph = H - MT - MB;
    let px = |x: f64| x0 + ML + (x - xlo) / (xhi - xlo) * pw;
    let py = |y: f64| MT + ph - (y - ylo) / (yhi - ylo) * ph;
    let _ = writeln!(s, r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="13">{}</text>"#, x0 + ML + pw / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{:.2}" y="{MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#, x0 + ML);
    for t in nice_ticks(xlo, xhi) {
        let x = px(t);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, MT + ph, MT + ph + 4.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, MT + ph + 16.0, fmt_tick(t));
    }
    for t in nice_ticks(ylo, yhi) {
        let y = py(t);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/>"#, x0 + ML - 4.0, x0 + ML);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, x0 + ML - 6.0, y + 4.0, fmt_tick(t));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">m (width)</text>"#, x0 + ML + pw / 2.0, H - 8.0);
    for (c, (_, color)) in curves.iter().zip(COLORS) {
        if c.points.len() > 1 {
            let upper: Vec<String> = c.points.iter().map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1 + p.2))).collect();
            let lower: Vec<String> = c.points.iter().rev().map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1 - p.2))).collect();
            let _ = writeln!(s, r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, upper.join(" "), lower.join(" "));
            let line: Vec<String> = c.points.iter().map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        }
        for p in &c.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, px(p.0), py(p.1));
            if c.points.len() == 1 && p.2 > 0.0 {
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}"/>"#,
                    py(p.1 - p.2),
                    py(p.1 + p.2),
                    x = px(p.0)
                );
            }
        }
        if c.theory.len() > 1 {
            let line: Vec<String> = c.theory.iter().map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5" stroke-dasharray="5,3"/>"#,
                line.join(" ")
            );
        } else if let Some(p) = c.theory.first() {
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-dasharray="3,2"/>"#,
                px(p.0) - 8.0,
                px(p.0) + 8.0,
                y = py(p.1)
            );
        }
    }
}

fn fmt_tick(t: f64) -> String {
    if t == t.round() && t.abs() < 1e6 {
        format!("{}", t as i64)
    } else {
        format!("{t:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::metrics::MetricsRow;
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Per arm and iteration: mean over seeds of the mean distance, and the
/// min/max of the per-seed means.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSeries {
    pub arm: String,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Aggregates rows per arm. Arms with differing iteration counts are cut
/// to the shortest; the second value reports whether that happened.
pub fn aggregate(rows: &[MetricsRow]) -> Result<(Vec<ArmSeries>, bool)> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset("no metrics rows to plot"));
    }
    let mut by_arm: BTreeMap<&str, BTreeMap<u64, BTreeMap<usize, f64>>> = BTreeMap::new();
    for r in rows {
        by_arm
            .entry(&r.arm)
            .or_default()
            .entry(r.seed)
            .or_default()
            .insert(r.iteration, r.dist_mean);
    }
    let shortest = by_arm.values().flat_map(|s| s.values()).map(BTreeMap::len).min().unwrap();
    let longest = by_arm.values().flat_map(|s| s.values()).map(BTreeMap::len).max().unwrap();
    let series = by_arm
        .into_iter()
        .map(|(arm, seeds)| {
            let mut s = ArmSeries {
                arm: arm.to_string(),
                mean: Vec::new(),
                min: Vec::new(),
                max: Vec::new(),
            };
            for i in 0..shortest {
                let vals: Vec<f64> = seeds.values().map(|its| *its.values().nth(i).unwrap()).collect();
                s.mean.push(vals.iter().sum::<f64>() / vals.len() as f64);
                s.min.push(vals.iter().copied().fold(f64::INFINITY, f64::min));
                s.max.push(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            }
            s
        })
        .collect();
    Ok((series, shortest != longest))
}

/// Distance-vs-iteration chart: one mean polyline and one min/max band per
/// arm, with a legend.
pub fn render_svg(series: &[ArmSeries], title: &str) -> String {
    let n = series.iter().map(|s| s.mean.len()).max().unwrap_or(0).max(1);
    let lo = series.iter().flat_map(|s| &s.min).copied().fold(0.0_f64, f64::min);
    let hi = series.iter().flat_map(|s| &s.max).copied().fold(lo + 1e-9, f64::max);
    let x = |i: usize| {
        if n == 1 {
            (MARGIN + WIDTH - MARGIN) / 2.0
        } else {
            MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / (n - 1) as f64
        }
    };
    let y = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / (hi - lo);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, x1, yb, yt) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<path d="M{x0} {yt} L{x0} {yb} L{x1} {yb}" stroke="black" fill="none"/>"#);
    for i in 0..n {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            x(i),
            yb + 16.0,
            i + 1
        );
    }
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{v:.2}</text>"#,
            x0 - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">iteration</text>"#,
        WIDTH / 2.0,
        HEIGHT - 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">distance (m)</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (k, a) in series.iter().enumerate() {
        let c = COLORS[k % COLORS.len()];
        let mut band: Vec<String> = a.max.iter().enumerate().map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v))).collect();
        band.extend(a.min.iter().enumerate().rev().map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v))));
        let _ = writeln!(
            s,
            r#"<polygon class="band" points="{}" fill="{c}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let line: Vec<String> = a
            .mean
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="mean" points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = MARGIN + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="14" height="4" fill="{c}"/>"#,
            x1 - 110.0,
            ly - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{ly:.2}" font-family="sans-serif" font-size="12">{}</text>"#,
            x1 - 90.0,
            escape(&a.arm.to_uppercase())
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

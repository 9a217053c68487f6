//! Aggregation across seeds and plot emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::MetricRow;
use crate::data::{avg_brightness, histogram, SampleBatch};
use crate::error::{Error, Result};

/// Linear-interpolation percentile (`q` in `[0, 1]`) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 0.5)
}

/// Spread of one metric across seeds at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
}

impl Band {
    fn of(values: &[f64]) -> Self {
        Band {
            median: median(values),
            p10: percentile(values, 0.1),
            p90: percentile(values, 0.9),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: String,
    pub n: usize,
    pub step: u64,
    pub seeds: usize,
    pub w1_median: f64,
    pub w1_p10: f64,
    pub w1_p90: f64,
    pub mmd_median: f64,
    pub mmd_p10: f64,
    pub mmd_p90: f64,
    pub ks_median: f64,
    pub ks_p10: f64,
    pub ks_p90: f64,
    pub divergences: usize,
}

/// Label of the model a row belongs to, without the seed.
pub fn group_label(r: &MetricRow) -> String {
    let mut s = format!("{}-{}", r.variant, r.prediction);
    if matches!(r.variant.as_str(), "offset" | "proposed") {
        let _ = write!(s, "-sc{}", r.sigma_c_sq);
    }
    if r.rho != 1.0 {
        let _ = write!(s, "-rho{}", r.rho);
    }
    s
}

/// Median and 10th/90th percentiles across seeds, per model, dimension and step.
pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, usize, u64), Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((group_label(r), r.n, r.step)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((group, n, step), rs)| {
            let col = |f: fn(&MetricRow) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (w, m, k) = (
                Band::of(&col(|r| r.w1)),
                Band::of(&col(|r| r.mmd)),
                Band::of(&col(|r| r.ks)),
            );
            SummaryRow {
                group,
                n,
                step,
                seeds: rs.len(),
                w1_median: w.median,
                w1_p10: w.p10,
                w1_p90: w.p90,
                mmd_median: m.median,
                mmd_p10: m.p10,
                mmd_p90: m.p90,
                ks_median: k.median,
                ks_p10: k.p10,
                ks_p90: k.p90,
                divergences: rs.iter().map(|r| r.divergences).sum(),
            }
        })
        .collect()
}

pub fn write_summary_csv(path: &Path, summary: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in summary {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    W1,
    Mmd,
    Ks,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::W1 => "1WD",
            Metric::Mmd => "MMD",
            Metric::Ks => "brightness KS",
        }
    }

    fn band(self, s: &SummaryRow) -> Band {
        match self {
            Metric::W1 => Band {
                median: s.w1_median,
                p10: s.w1_p10,
                p90: s.w1_p90,
            },
            Metric::Mmd => Band {
                median: s.mmd_median,
                p10: s.mmd_p10,
                p90: s.mmd_p90,
            },
            Metric::Ks => Band {
                median: s.ks_median,
                p10: s.ks_p10,
                p90: s.ks_p90,
            },
        }
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Median-over-seeds curves with shaded p10-p90 bands, one curve per model,
/// for a single data dimension.
pub fn metric_svg(summary: &[SummaryRow], metric: Metric, n: usize) -> String {
    let (w, h, pad) = (640.0, 400.0, 60.0);
    let mut series: BTreeMap<&str, Vec<(u64, Band)>> = BTreeMap::new();
    for s in summary.iter().filter(|s| s.n == n) {
        series.entry(&s.group).or_default().push((s.step, metric.band(s)));
    }
    let pts = series.values().flatten();
    let x_max = pts.clone().map(|(s, _)| *s).max().unwrap_or(1).max(1) as f64;
    let y_max = pts
        .map(|(_, b)| b.p90)
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-12)
        * 1.05;
    let sx = |s: u64| pad + (w - 2.0 * pad) * s as f64 / x_max;
    let sy = |v: f64| h - pad - (h - 2.0 * pad) * (v / y_max).clamp(0.0, 1.0);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle">{} (n = {n}), median with 10-90% band</text>"#,
        w / 2.0,
        metric.name()
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{pad},{pad} V{} H{}" stroke="black" fill="none"/>"#,
        h - pad,
        w - pad
    );
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{v:.3}</text>"#,
            pad - 5.0,
            sy(v) + 4.0
        );
        let s = (x_max * i as f64 / 4.0) as u64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{s}</text>"#,
            sx(s),
            h - pad + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">training step</text>"#,
        w / 2.0,
        h - 15.0
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let upper: Vec<String> = pts.iter().map(|(s, b)| format!("{},{}", sx(*s), sy(b.p90))).collect();
        let lower: Vec<String> = pts.iter().rev().map(|(s, b)| format!("{},{}", sx(*s), sy(b.p10))).collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = pts.iter().map(|(s, b)| format!("{},{}", sx(*s), sy(b.median))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = pad + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{name}</text>"#,
            w - pad - 5.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Brightness histograms of several sample sets on shared bins over `[-k, k]`.
/// Columns: `bin_lo, bin_hi`, then one fraction column per labelled set.
pub fn write_brightness_csv(
    path: &Path,
    sets: &[(String, &SampleBatch)],
    k: f64,
    bins: usize,
) -> Result<()> {
    if sets.is_empty() {
        return Err(Error::Param("no sample sets to histogram".into()));
    }
    let hists = sets
        .iter()
        .map(|(_, b)| histogram(&avg_brightness(b), -k, k, bins))
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["bin_lo".to_string(), "bin_hi".to_string()];
    header.extend(sets.iter().map(|(l, _)| l.clone()));
    w.write_record(&header)?;
    for i in 0..bins {
        let mut rec = vec![hists[0].edges[i].to_string(), hists[0].edges[i + 1].to_string()];
        rec.extend(hists.iter().map(|h| h.fraction(i).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

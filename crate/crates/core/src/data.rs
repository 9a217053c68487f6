//! Cylinder point clouds, sample batches and their on-disk form.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{Prediction, Variant};
use crate::rng::{fill_normal, stream, substream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderConfig {
    pub size: usize,
    pub dim: usize,
    /// Radius as a fraction of `||1_n||`.
    pub r: f64,
    /// Half-height of the cylinder along `1_n`.
    pub k: f64,
    pub seed: u64,
}

impl Default for CylinderConfig {
    fn default() -> Self {
        Self {
            size: 5000,
            dim: 2,
            r: 0.5,
            k: 2.0,
            seed: 0,
        }
    }
}

impl CylinderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Param(format!(
                "cylinder needs dimension >= 2, got {}",
                self.dim
            )));
        }
        if self.size == 0 {
            return Err(Error::Param("dataset size must be positive".into()));
        }
        if !(self.r > 0.0 && self.r.is_finite() && self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::Param(format!(
                "cylinder needs r > 0 and k > 0, got r={} k={}",
                self.r, self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stream_id(self) -> u64 {
        match self {
            Split::Train => stream::TRAIN_DATA,
            Split::Test => stream::TEST_DATA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Dataset,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub source: Source,
    pub config_hash: String,
    pub seed: u64,
    #[serde(default)]
    pub variant: Option<Variant>,
    #[serde(default)]
    pub prediction: Option<Prediction>,
    /// Training step of the generating checkpoint.
    #[serde(default)]
    pub step: Option<u64>,
    /// Generated chains requested, including divergent ones.
    #[serde(default)]
    pub requested: usize,
    /// Chains dropped because a state became non-finite.
    #[serde(default)]
    pub divergences: usize,
    /// Emitted rows with at least one component on the clipping boundary.
    #[serde(default)]
    pub clipped: usize,
}

impl SampleMeta {
    pub fn dataset(seed: u64, config_hash: String) -> Self {
        Self {
            source: Source::Dataset,
            config_hash,
            seed,
            variant: None,
            prediction: None,
            step: None,
            requested: 0,
            divergences: 0,
            clipped: 0,
        }
    }
}

/// `rows x dim` points stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub dim: usize,
    pub data: Vec<f64>,
    pub meta: SampleMeta,
}

impl SampleBatch {
    pub fn new(dim: usize, data: Vec<f64>, meta: SampleMeta) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample batch".into()));
        }
        Ok(Self { dim, data, meta })
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> SampleBatch {
        SampleBatch {
            dim: self.dim,
            data: self.data.iter().map(|v| v * factor).collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record((0..self.dim).map(|j| format!("x{j}")))?;
        for i in 0..self.rows() {
            w.write_record(self.row(i).iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    /// Reads a CSV written by [`SampleBatch::write_csv`]; the sidecar is optional.
    pub fn read_csv(path: &Path) -> Result<SampleBatch> {
        let corrupt = |reason: String| Error::Corrupt {
            path: path.display().to_string(),
            reason,
        };
        let mut r = csv::Reader::from_path(path)?;
        let dim = r.headers()?.len();
        if dim == 0 {
            return Err(corrupt("no columns".into()));
        }
        let mut data = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for field in rec.iter() {
                data.push(
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| corrupt(format!("bad number '{field}': {e}")))?,
                );
            }
        }
        let side = sidecar_path(path);
        let meta = if side.exists() {
            serde_json::from_str(&fs::read_to_string(&side)?)
                .map_err(|e| corrupt(format!("bad sidecar: {e}")))?
        } else {
            SampleMeta::dataset(0, String::new())
        };
        SampleBatch::new(dim, data, meta).map_err(|e| corrupt(e.to_string()))
    }
}

/// `foo.csv` -> `foo.csv.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// A generated Cylinder set plus the height draw `u_h` of each row.
#[derive(Debug, Clone)]
pub struct CylinderDraw {
    pub batch: SampleBatch,
    pub u_h: Vec<f64>,
}

/// Points `u_h k 1_n + u_r x_ortho` with `u_h ~ U(-1, 1)`,
/// `u_r ~ U(0, r ||1_n||)` and `x_ortho` a uniformly random unit vector
/// orthogonal to `1_n`.
pub fn cylinder_with_latents(cfg: &CylinderConfig, split: Split) -> Result<CylinderDraw> {
    cfg.validate()?;
    let n = cfg.dim;
    let mut rng = substream(cfg.seed, split.stream_id());
    let radius = cfg.r * (n as f64).sqrt();
    let mut data = Vec::with_capacity(cfg.size * n);
    let mut u_h = Vec::with_capacity(cfg.size);
    let mut g = vec![0.0; n];
    for _ in 0..cfg.size {
        let norm = loop {
            fill_normal(&mut rng, &mut g);
            let mean = g.iter().sum::<f64>() / n as f64;
            g.iter_mut().for_each(|v| *v -= mean);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            // a draw exactly along 1_n has no orthogonal direction
            if norm > 1e-12 {
                break norm;
            }
        };
        let ur = rng.random_range(0.0..radius);
        let uh = rng.random_range(-1.0..1.0);
        u_h.push(uh);
        data.extend(g.iter().map(|v| uh * cfg.k + ur * v / norm));
    }
    let batch = SampleBatch::new(n, data, SampleMeta::dataset(cfg.seed, String::new()))?;
    Ok(CylinderDraw { batch, u_h })
}

/// Training split of the Cylinder dataset.
pub fn cylinder_dataset(cfg: &CylinderConfig) -> Result<SampleBatch> {
    Ok(cylinder_with_latents(cfg, Split::Train)?.batch)
}

/// Average brightness `(1/n) x . 1_n` of every row.
pub fn avg_brightness(batch: &SampleBatch) -> Vec<f64> {
    (0..batch.rows())
        .map(|i| batch.row(i).iter().sum::<f64>() / batch.dim as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub below: usize,
    pub above: usize,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.below + self.above
    }

    /// Share of all values (including out-of-range ones) in bin `i`.
    pub fn fraction(&self, i: usize) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.counts[i] as f64 / total as f64
        }
    }
}

/// Equal-width bins on `[lo, hi]`; the last bin is closed on the right.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
    if bins == 0 || !(lo < hi) {
        return Err(Error::Param(format!(
            "histogram needs bins > 0 and lo < hi, got {bins} on [{lo}, {hi}]"
        )));
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut h = Histogram {
        edges,
        counts: vec![0; bins],
        below: 0,
        above: 0,
    };
    for &v in values {
        if v < lo {
            h.below += 1;
        } else if v > hi {
            h.above += 1;
        } else {
            let i = (((v - lo) / width) as usize).min(bins - 1);
            h.counts[i] += 1;
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ks_vs_uniform;

    #[test]
    fn cylinder_structure_and_statistics() {
        for dim in [2, 200] {
            let cfg = CylinderConfig {
                dim,
                ..Default::default()
            };
            let draw = cylinder_with_latents(&cfg, Split::Train).unwrap();
            let b = &draw.batch;
            assert_eq!(b.rows(), 5000);
            let bright = avg_brightness(b);
            for (i, (l, uh)) in bright.iter().zip(&draw.u_h).enumerate() {
                // the orthogonal part sums to zero, so brightness is u_h k
                assert!((l - uh * 2.0).abs() < 1e-9, "row {i}");
                let ortho: f64 = b.row(i).iter().map(|v| v - uh * 2.0).sum();
                assert!(ortho.abs() < 1e-9);
            }
            assert!(ks_vs_uniform(&bright, 2.0).unwrap() < 0.03);
            let n = b.rows() as f64;
            for j in [0, dim - 1] {
                let col: Vec<f64> = (0..b.rows()).map(|i| b.row(i)[j]).collect();
                let mean = col.iter().sum::<f64>() / n;
                let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                assert!((1.1..=1.3).contains(&sd), "dim {dim} sd {sd}");
            }
        }
    }

    #[test]
    fn cylinder_validation_and_determinism() {
        let bad = CylinderConfig {
            dim: 1,
            ..Default::default()
        };
        assert!(cylinder_dataset(&bad).is_err());
        let cfg = CylinderConfig {
            size: 50,
            seed: 3,
            ..Default::default()
        };
        assert_eq!(cylinder_dataset(&cfg).unwrap(), cylinder_dataset(&cfg).unwrap());
        let test = cylinder_with_latents(&cfg, Split::Test).unwrap().batch;
        assert_ne!(test.data, cylinder_dataset(&cfg).unwrap().data);
    }

    #[test]
    fn brightness_examples() {
        let b = SampleBatch::new(3, vec![0.0, 0.0, 0.0, 2.0, 2.0, 2.0], SampleMeta::dataset(0, String::new()))
            .unwrap();
        assert_eq!(avg_brightness(&b), vec![0.0, 2.0]);
    }

    #[test]
    fn scaling_round_trip() {
        let cfg = CylinderConfig {
            size: 100,
            dim: 5,
            ..Default::default()
        };
        let b = cylinder_dataset(&cfg).unwrap();
        for rho in [0.7, 0.9, 1.1, 1.3] {
            let back = b.scaled(1.0 / rho).scaled(rho);
            for (x, y) in b.data.iter().zip(&back.data) {
                assert!((x - y).abs() <= 1e-14 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let cfg = CylinderConfig {
            size: 20,
            dim: 4,
            ..Default::default()
        };
        let mut b = cylinder_dataset(&cfg).unwrap();
        b.meta.config_hash = "abc".into();
        b.write_csv(&path).unwrap();
        let back = SampleBatch::read_csv(&path).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn histogram_bins() {
        let h = histogram(&[-2.0, -1.9, 0.0, 2.0, 3.0, -5.0], -2.0, 2.0, 10).unwrap();
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[5], 1);
        assert_eq!(h.counts[9], 1);
        assert_eq!((h.below, h.above), (1, 1));
        assert_eq!(h.total(), 6);
        assert!(histogram(&[], 1.0, 1.0, 3).is_err());
    }
}

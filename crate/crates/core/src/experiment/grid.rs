//! Experiment grids with an on-disk cache keyed by config hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Profile, RunConfig};
use super::report::{metric_svg, summarize, write_brightness_csv, write_summary_csv, Metric};
use super::train::{append_rows, load_datasets, train, MetricRow, TrainOptions};
use crate::data::{avg_brightness, SampleBatch};
use crate::error::Result;
use crate::loss::{Prediction, Variant};

/// Outcome of one training run as stored in the cache.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub rows: Vec<MetricRow>,
    /// Average brightness of the final generated samples, in data units.
    pub final_brightness: Vec<f64>,
    pub skipped_steps: u64,
}

impl RunResult {
    pub fn final_row(&self) -> Option<&MetricRow> {
        self.rows.iter().max_by_key(|r| r.step)
    }
}

fn run_id(cfg: &RunConfig) -> String {
    let mut s = format!("{}-{}-n{}", cfg.model.variant, cfg.model.prediction, cfg.dataset.dim);
    if cfg.scaling_rho != 1.0 {
        s.push_str(&format!("-rho{}", cfg.scaling_rho));
    }
    s.push_str(&format!("-s{}", cfg.master_seed));
    s
}

fn seeded(base: &RunConfig, variant: Variant, prediction: Prediction, n: usize, seed: u64) -> RunConfig {
    let mut c = base.clone().with_variant(variant, prediction);
    c.dataset.dim = n;
    c.dataset.seed = seed;
    c.master_seed = seed;
    c
}

/// Runs for a profile. Desk: base and proposed (eps) at n = 2 and 200 over
/// three seeds, base with rho in {0.9, 1.1} at n = 200, one proposed-v run,
/// then base and proposed at n = 50. Paper: every variant at both widths over six seeds, plus the rho
/// sweep.
pub fn grid(profile: Profile) -> Vec<RunConfig> {
    let base = RunConfig::profile(profile);
    let mut out = Vec::new();
    match profile {
        Profile::Desk => {
            for n in [2, 200] {
                for v in [Variant::Base, Variant::Proposed] {
                    for s in 0..3 {
                        out.push(seeded(&base, v, Prediction::Eps, n, s));
                    }
                }
            }
            for rho in [0.9, 1.1] {
                for s in 0..3 {
                    let mut c = seeded(&base, Variant::Base, Prediction::Eps, 200, s);
                    c.scaling_rho = rho;
                    out.push(c);
                }
            }
            out.push(seeded(&base, Variant::Proposed, Prediction::V, 200, 0));
            for v in [Variant::Base, Variant::Proposed] {
                for s in 0..3 {
                    out.push(seeded(&base, v, Prediction::Eps, 50, s));
                }
            }
        }
        Profile::Paper => {
            let combos = [
                (Variant::Base, Prediction::Eps),
                (Variant::Offset, Prediction::Eps),
                (Variant::Proposed, Prediction::Eps),
                (Variant::ZeroSnr, Prediction::V),
                (Variant::Proposed, Prediction::V),
            ];
            for n in [2, 200] {
                for (v, p) in combos {
                    for s in 0..6 {
                        out.push(seeded(&base, v, p, n, s));
                    }
                }
            }
            for rho in [0.9, 1.1] {
                for s in 0..6 {
                    let mut c = seeded(&base, Variant::Base, Prediction::Eps, 200, s);
                    c.scaling_rho = rho;
                    out.push(c);
                }
            }
        }
    }
    out
}

pub fn desk_grid() -> Vec<RunConfig> {
    grid(Profile::Desk)
}

/// Cache directory of one config.
pub fn cache_entry(cfg: &RunConfig, cache_dir: &Path) -> PathBuf {
    cache_dir.join(cfg.hash())
}

/// Loads a cached result if present.
pub fn load_cached(cfg: &RunConfig, cache_dir: &Path) -> Result<Option<RunResult>> {
    let path = cache_entry(cfg, cache_dir).join("result.json");
    if !path.exists() {
        return Ok(None);
    }
    let r: RunResult = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    Ok(Some(r))
}

/// Trains `cfg` unless a result for its hash is already cached.
pub fn run_cached(cfg: &RunConfig, cache_dir: &Path) -> Result<RunResult> {
    if let Some(r) = load_cached(cfg, cache_dir)? {
        log::info!("cache hit for {} ({})", r.run_id, r.config_hash);
        return Ok(r);
    }
    let dir = cache_entry(cfg, cache_dir);
    std::fs::create_dir_all(&dir)?;
    let id = run_id(cfg);
    let log_path = dir.join("metrics.partial.csv");
    if log_path.exists() {
        std::fs::remove_file(&log_path)?;
    }
    let (train_set, test_set) = load_datasets(cfg)?;
    let outcome = train(
        cfg,
        &train_set,
        &test_set,
        &TrainOptions {
            run_id: id.clone(),
            checkpoint_dir: Some(dir.clone()),
            log_path: Some(log_path),
        },
    )?;
    outcome.final_samples.write_csv(&dir.join("samples.csv"))?;
    let result = RunResult {
        run_id: id,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        rows: outcome.rows,
        final_brightness: avg_brightness(&outcome.final_samples),
        skipped_steps: outcome.skipped_steps,
    };
    let tmp = dir.join("result.json.tmp");
    std::fs::write(&tmp, serde_json::to_string(&result)?)?;
    std::fs::rename(&tmp, dir.join("result.json"))?;
    Ok(result)
}

/// Runs every config (cached), then writes `metrics.csv`, `summary.csv`,
/// one SVG per metric and width, and brightness histograms into `out_dir`.
pub fn run_grid(cfgs: &[RunConfig], cache_dir: &Path, out_dir: &Path) -> Result<Vec<RunResult>> {
    let mut results = Vec::with_capacity(cfgs.len());
    for (i, cfg) in cfgs.iter().enumerate() {
        log::info!("run {}/{}: {}", i + 1, cfgs.len(), run_id(cfg));
        results.push(run_cached(cfg, cache_dir)?);
    }
    write_reports(&results, cache_dir, out_dir)?;
    Ok(results)
}

pub fn write_reports(results: &[RunResult], cache_dir: &Path, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let rows: Vec<MetricRow> = results.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    let metrics = out_dir.join("metrics.csv");
    if metrics.exists() {
        std::fs::remove_file(&metrics)?;
    }
    append_rows(&metrics, &rows)?;
    let summary = summarize(&rows);
    write_summary_csv(&out_dir.join("summary.csv"), &summary)?;

    let mut dims: Vec<usize> = results.iter().map(|r| r.config.dataset.dim).collect();
    dims.sort_unstable();
    dims.dedup();
    for &n in &dims {
        for (m, tag) in [(Metric::W1, "w1"), (Metric::Mmd, "mmd"), (Metric::Ks, "ks")] {
            std::fs::write(out_dir.join(format!("{tag}_n{n}.svg")), metric_svg(&summary, m, n))?;
        }
        // Seed-0 final samples of each model next to the seed-0 test set.
        let firsts: Vec<&RunResult> = results
            .iter()
            .filter(|r| r.config.dataset.dim == n && r.config.master_seed == 0)
            .collect();
        let Some(first) = firsts.first() else { continue };
        let (_, test) = load_datasets(&first.config)?;
        let mut sets: Vec<(String, SampleBatch)> = vec![("test".into(), test)];
        for r in &firsts {
            let p = cache_entry(&r.config, cache_dir).join("samples.csv");
            if p.exists() {
                sets.push((r.run_id.clone(), SampleBatch::read_csv(&p)?));
            }
        }
        let refs: Vec<(String, &SampleBatch)> = sets.iter().map(|(l, b)| (l.clone(), b)).collect();
        write_brightness_csv(
            &out_dir.join(format!("brightness_n{n}.csv")),
            &refs,
            first.config.dataset.k,
            20,
        )?;
    }
    Ok(())
}

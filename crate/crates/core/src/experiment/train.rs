//! The training loop with periodic evaluation.

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::data::{avg_brightness, cylinder_with_latents, SampleBatch, Split};
use crate::denoiser::{
    adam_step, clip_grad_norm, write_checkpoint, AdamState, Batch, CheckpointHeader, Mlp,
};
use crate::error::{Error, Result};
use crate::loss::make_pair;
use crate::metrics::{ks_vs_uniform, mmd, wasserstein1};
use crate::rng::{derive_seed, stream, substream};
use crate::sampler::generate;
use crate::schedule::ScheduleTables;

/// Consecutive non-finite steps tolerated before a run is aborted.
pub const MAX_CONSECUTIVE_SKIPS: u64 = 100;

/// One evaluation of a model snapshot against the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub step: u64,
    pub variant: String,
    pub prediction: String,
    pub sigma_c_sq: f64,
    pub n: usize,
    pub seed: u64,
    pub rho: f64,
    #[serde(deserialize_with = "nan_or_f64")]
    pub w1: f64,
    #[serde(deserialize_with = "nan_or_f64")]
    pub mmd: f64,
    #[serde(deserialize_with = "nan_or_f64")]
    pub ks: f64,
    pub divergences: usize,
    pub clipped: usize,
    pub generated: usize,
    /// Mean training loss since the previous evaluation (NaN at step 0).
    #[serde(deserialize_with = "nan_or_f64")]
    pub train_loss: f64,
    pub config_hash: String,
}

// JSON writes NaN as null.
fn nan_or_f64<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub run_id: String,
    /// Writes `step_<k>.ckpt` at every evaluation plus `final.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Appends every metric row as it is produced.
    pub log_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Mlp<f32>,
    pub rows: Vec<MetricRow>,
    /// Samples generated at the last evaluation, already rescaled.
    pub final_samples: SampleBatch,
    pub skipped_steps: u64,
}

/// Train and test splits for a configuration.
pub fn load_datasets(cfg: &RunConfig) -> Result<(SampleBatch, SampleBatch)> {
    let hash = cfg.hash();
    let mut train = cylinder_with_latents(&cfg.dataset, Split::Train)?.batch;
    let mut test = cylinder_with_latents(&cfg.dataset, Split::Test)?.batch;
    train.meta.config_hash = hash.clone();
    test.meta.config_hash = hash;
    Ok((train, test))
}

/// Evaluation context shared by every snapshot of a run.
pub struct Evaluator<'a> {
    pub cfg: &'a RunConfig,
    pub tables: &'a ScheduleTables,
    pub test: &'a SampleBatch,
}

impl Evaluator<'_> {
    /// Generates `eval.n_generate` samples at `step` and scores them.
    pub fn evaluate(&self, model: &Mlp<f32>, step: u64, run_id: &str) -> Result<(MetricRow, SampleBatch)> {
        let cfg = self.cfg;
        let scfg = cfg.sampler_config(cfg.eval.n_generate, derive_seed(cfg.master_seed, step));
        let mut samples = generate(model, self.tables, &cfg.xi_spec(), &scfg)?.scaled(cfg.scaling_rho);
        samples.meta.step = Some(step);
        samples.meta.config_hash = cfg.hash();
        let row = self.score(&samples, step, run_id)?;
        Ok((row, samples))
    }

    pub fn score(&self, samples: &SampleBatch, step: u64, run_id: &str) -> Result<MetricRow> {
        let cfg = self.cfg;
        let (w1, mmd_v, ks) = if samples.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            (
                wasserstein1(samples, self.test, cfg.eval.wd_subsample, cfg.master_seed)?,
                mmd(
                    samples,
                    self.test,
                    cfg.eval.mmd_bandwidth_mode.bandwidth(cfg.dataset.dim),
                )?,
                ks_vs_uniform(&avg_brightness(samples), cfg.dataset.k)?,
            )
        };
        Ok(MetricRow {
            run_id: run_id.to_string(),
            step,
            variant: cfg.model.variant.to_string(),
            prediction: cfg.model.prediction.to_string(),
            sigma_c_sq: cfg.model.sigma_c_sq,
            n: cfg.dataset.dim,
            seed: cfg.master_seed,
            rho: cfg.scaling_rho,
            w1,
            mmd: mmd_v,
            ks,
            divergences: samples.meta.divergences,
            clipped: samples.meta.clipped,
            generated: samples.rows(),
            train_loss: f64::NAN,
            config_hash: cfg.hash(),
        })
    }
}

pub fn append_rows(path: &std::path::Path, rows: &[MetricRow]) -> Result<()> {
    let exists = path.exists() && std::fs::metadata(path)?.len() > 0;
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &std::path::Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Trains one model from scratch, evaluating at step 0, every
/// `eval.every_steps` and at the final step.
pub fn train(
    cfg: &RunConfig,
    train_set: &SampleBatch,
    test_set: &SampleBatch,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = cfg.dataset.dim;
    if train_set.dim != n || test_set.dim != n {
        return Err(Error::Shape(format!(
            "datasets have width {} / {}, config says {n}",
            train_set.dim, test_set.dim
        )));
    }
    if train_set.is_empty() {
        return Err(Error::Param("empty training set".into()));
    }
    let tables = cfg.tables()?;
    let loss = cfg.loss_spec();
    let xi = cfg.xi_spec();
    let eval = Evaluator {
        cfg,
        tables: &tables,
        test: test_set,
    };
    let seed = cfg.master_seed;
    let mut model = Mlp::<f32>::init_params(cfg.mlp_spec(), seed)?;
    let mut adam = AdamState::new(model.num_params(), cfg.adam());
    let mut batch_rng = substream(seed, stream::BATCH_INDEX);
    let mut t_rng = substream(seed, stream::TIMESTEP);
    let mut noise_rng = substream(seed, stream::PAIR_NOISE);
    let inv_rho = 1.0 / cfg.scaling_rho;

    let mut rows = Vec::new();
    let record = |row: MetricRow, rows: &mut Vec<MetricRow>| -> Result<()> {
        log::info!(
            "[{}] step {} w1={:.4} mmd={:.4} ks={:.4} loss={:.4}",
            row.run_id,
            row.step,
            row.w1,
            row.mmd,
            row.ks,
            row.train_loss
        );
        if let Some(p) = &opts.log_path {
            append_rows(p, std::slice::from_ref(&row))?;
        }
        rows.push(row);
        Ok(())
    };
    let snapshot = |model: &Mlp<f32>, step: u64, name: &str| -> Result<()> {
        if let Some(dir) = &opts.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            let mut h = CheckpointHeader::new(
                model,
                cfg.model.variant,
                cfg.model.prediction,
                cfg.schedule_hash(),
                step,
                seed,
            );
            h.config = Some(serde_json::to_value(cfg)?);
            write_checkpoint(&dir.join(name), &h, model)?;
        }
        Ok(())
    };

    let (row, mut last_samples) = eval.evaluate(&model, 0, &opts.run_id)?;
    record(row, &mut rows)?;

    let (bs, horizon, rows_avail) = (cfg.optimizer.batch_size, cfg.schedule.horizon, train_set.rows());
    let mut skipped = 0u64;
    let mut consecutive = 0u64;
    let (mut loss_sum, mut loss_count) = (0.0f64, 0u64);
    let mut x0 = vec![0.0; n];
    let mut batch = Batch::<f32> {
        x: Vec::with_capacity(bs * n),
        target: Vec::with_capacity(bs * n),
        t: Vec::with_capacity(bs),
        weight: Vec::with_capacity(bs),
    };
    for step in 1..=cfg.optimizer.max_steps {
        batch.x.clear();
        batch.target.clear();
        batch.t.clear();
        batch.weight.clear();
        for _ in 0..bs {
            let idx = batch_rng.random_range(0..rows_avail);
            for (d, s) in x0.iter_mut().zip(train_set.row(idx)) {
                *d = s * inv_rho;
            }
            let t = t_rng.random_range(1..=horizon);
            let pair = make_pair(&loss, &x0, t, &tables, &xi, &mut noise_rng)?;
            batch.x.extend(pair.x_t.iter().map(|v| *v as f32));
            batch.target.extend(pair.target.iter().map(|v| *v as f32));
            batch.t.push(t);
            batch.weight.push(pair.weight as f32);
        }
        let (l, mut grads) = model.loss_and_grad(&batch)?;
        let applied = if l.is_finite() {
            clip_grad_norm(&mut grads, cfg.optimizer.clip_norm);
            adam_step(model.params_mut(), &grads, &mut adam)?
        } else {
            false
        };
        if applied {
            consecutive = 0;
            loss_sum += l;
            loss_count += 1;
        } else {
            skipped += 1;
            consecutive += 1;
            log::warn!("[{}] step {step}: non-finite loss or gradient, skipped", opts.run_id);
            if consecutive >= MAX_CONSECUTIVE_SKIPS {
                return Err(Error::Numeric(format!(
                    "{consecutive} consecutive non-finite steps at step {step}"
                )));
            }
        }
        if step % cfg.eval.every_steps == 0 || step == cfg.optimizer.max_steps {
            let (mut row, samples) = eval.evaluate(&model, step, &opts.run_id)?;
            row.train_loss = if loss_count > 0 {
                loss_sum / loss_count as f64
            } else {
                f64::NAN
            };
            (loss_sum, loss_count) = (0.0, 0);
            record(row, &mut rows)?;
            snapshot(&model, step, &format!("step_{step}.ckpt"))?;
            last_samples = samples;
        }
    }
    snapshot(&model, cfg.optimizer.max_steps, "final.ckpt")?;
    Ok(TrainOutcome {
        model,
        rows,
        final_samples: last_samples,
        skipped_steps: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CylinderConfig;
    use crate::loss::{Prediction, Variant};

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::desk().with_variant(Variant::Proposed, Prediction::Eps);
        cfg.dataset = CylinderConfig {
            size: 256,
            dim: 2,
            ..Default::default()
        };
        cfg.model.hidden = vec![32, 32];
        cfg.schedule.horizon = 20;
        cfg.optimizer.batch_size = 32;
        cfg.optimizer.max_steps = 30;
        cfg.eval.every_steps = 10;
        cfg.eval.n_generate = 64;
        cfg.eval.wd_subsample = 64;
        cfg
    }

    #[test]
    fn short_run_is_deterministic_and_logged() {
        let cfg = tiny_cfg();
        let (tr, te) = load_datasets(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let opts = TrainOptions {
            run_id: "t".into(),
            checkpoint_dir: Some(dir.path().join("ck")),
            log_path: Some(dir.path().join("log.csv")),
        };
        let a = train(&cfg, &tr, &te, &opts).unwrap();
        assert_eq!(a.rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 10, 20, 30]);
        assert!(a.rows.iter().all(|r| r.config_hash == cfg.hash()));
        assert_eq!(read_rows(&dir.path().join("log.csv")).unwrap().len(), 4);
        assert!(dir.path().join("ck/final.ckpt").exists());
        let b = train(&cfg, &tr, &te, &TrainOptions::default()).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.final_samples, b.final_samples);
    }

    #[test]
    fn loss_decreases_early_on_cylinder() {
        // fixed 256-row batch, n = 2, reference architecture
        let mut cfg = RunConfig::desk();
        cfg.dataset.size = 256;
        let (tr, _) = load_datasets(&cfg).unwrap();
        let tables = cfg.tables().unwrap();
        let mut rng = substream(1, 1);
        let pairs: Vec<_> = (0..256)
            .map(|i| {
                let t = rng.random_range(1..=200);
                make_pair(&cfg.loss_spec(), tr.row(i), t, &tables, &cfg.xi_spec(), &mut rng).unwrap()
            })
            .collect();
        let batch = Batch::<f32>::from_pairs(&pairs);
        let mut model = Mlp::<f32>::init_params(cfg.mlp_spec(), 0).unwrap();
        let mut adam = AdamState::new(model.num_params(), cfg.adam());
        let first = model.loss_and_grad(&batch).unwrap().0;
        let mut last = first;
        for _ in 0..50 {
            let (l, mut g) = model.loss_and_grad(&batch).unwrap();
            last = l;
            clip_grad_norm(&mut g, 1.0);
            adam_step(model.params_mut(), &g, &mut adam).unwrap();
        }
        assert!(last < first, "{last} !< {first}");
    }
}

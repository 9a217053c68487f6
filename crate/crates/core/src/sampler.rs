//! Ancestral sampling from a trained denoiser.

use serde::{Deserialize, Serialize};

use crate::data::{SampleBatch, SampleMeta, Source};
use crate::denoiser::{Mlp, Scalar};
use crate::error::{Error, Result};
use crate::loss::{Prediction, Variant};
use crate::process::{eps_mean_coefs, reverse_init, v_mean_coefs, MeanCoefs};
use crate::rng::{fill_normal, stream, substream, StreamRng};
use crate::schedule::ScheduleTables;
use crate::xi_noise::XiSpec;

/// Anything that maps a batch of noisy states at one timestep to predictions.
pub trait Denoise {
    fn data_dim(&self) -> usize;
    /// `x` holds `x.len() / data_dim()` rows; returns one prediction row per input row.
    fn predict(&self, x: &[f64], t: usize) -> Result<Vec<f64>>;
}

impl<S: Scalar> Denoise for Mlp<S> {
    fn data_dim(&self) -> usize {
        self.spec().data_dim
    }

    fn predict(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        let rows = x.len() / self.data_dim();
        let xs: Vec<S> = x.iter().map(|v| S::from_f64(*v)).collect();
        let out = self.forward_batch(&xs, &vec![t; rows])?;
        Ok(out.into_iter().map(|v| v.to_f64()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub variant: Variant,
    pub prediction: Prediction,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(variant: Variant, prediction: Prediction, n_samples: usize, seed: u64) -> Self {
        Self {
            variant,
            prediction,
            clip_lo: -10.0,
            clip_hi: 10.0,
            n_samples,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_lo < self.clip_hi) {
            return Err(Error::Config(format!(
                "clip range [{}, {}] is empty",
                self.clip_lo, self.clip_hi
            )));
        }
        if self.variant == Variant::ZeroSnr && self.prediction == Prediction::Eps {
            return Err(Error::Unsupported("zero_snr requires v-prediction".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        Ok(())
    }
}

/// Stream owned by the `i`-th generated chain.
pub fn chain_rng(seed: u64, i: usize) -> StreamRng {
    substream(seed, stream::SAMPLER_BASE + i as u64)
}

/// Runs `cfg.n_samples` independent reverse chains from `t = T` down to 0.
///
/// Each chain draws, from its own stream, the initial state (`xi` then
/// `x_T ~ N(xi, sigma0^2 I)` for the proposed model, `N(0, I)` otherwise)
/// followed by `n` normals per step. States are clipped after every step.
/// Chains whose state becomes non-finite are dropped and counted.
pub fn generate<D: Denoise>(
    model: &D,
    tables: &ScheduleTables,
    spec: &XiSpec,
    cfg: &SamplerConfig,
) -> Result<SampleBatch> {
    cfg.validate()?;
    let n = model.data_dim();
    if spec.dim != n {
        return Err(Error::Shape(format!("xi dim {} vs model dim {n}", spec.dim)));
    }
    if cfg.variant == Variant::Proposed {
        spec.validate()?;
    }
    let horizon = tables.horizon();
    let coefs: Vec<MeanCoefs> = (1..=horizon)
        .map(|t| match cfg.prediction {
            Prediction::Eps => eps_mean_coefs(tables, t),
            Prediction::V => v_mean_coefs(tables, t),
        })
        .collect::<Result<_>>()?;

    let count = cfg.n_samples;
    let mut rngs: Vec<StreamRng> = (0..count).map(|i| chain_rng(cfg.seed, i)).collect();
    let mut x = vec![0.0; count * n];
    for (i, rng) in rngs.iter_mut().enumerate() {
        let row = &mut x[i * n..(i + 1) * n];
        if cfg.variant == Variant::Proposed {
            let (x_t, _xi) = reverse_init(spec, tables, rng)?;
            row.copy_from_slice(&x_t);
        } else {
            fill_normal(rng, row);
        }
    }

    let mut alive = vec![true; count];
    let mut z = vec![0.0; n];
    for t in (1..=horizon).rev() {
        let pred = model.predict(&x, t)?;
        let c = coefs[t - 1];
        let sigma = tables.sigma_rev_sq(t).sqrt();
        for i in 0..count {
            if !alive[i] {
                continue;
            }
            fill_normal(&mut rngs[i], &mut z);
            let row = &mut x[i * n..(i + 1) * n];
            let p = &pred[i * n..(i + 1) * n];
            let mut finite = true;
            for j in 0..n {
                let mu = c.x_coef * row[j] - c.pred_coef * p[j];
                let v = (mu + sigma * z[j]).clamp(cfg.clip_lo, cfg.clip_hi);
                finite &= v.is_finite();
                row[j] = v;
            }
            if !finite {
                alive[i] = false;
                row.fill(0.0);
                log::warn!("sample {i} diverged at t={t}");
            }
        }
    }

    let mut data = Vec::with_capacity(count * n);
    let mut clipped = 0;
    for i in (0..count).filter(|i| alive[*i]) {
        let row = &x[i * n..(i + 1) * n];
        if row.iter().any(|v| *v <= cfg.clip_lo || *v >= cfg.clip_hi) {
            clipped += 1;
        }
        data.extend_from_slice(row);
    }
    let meta = SampleMeta {
        source: Source::Generated,
        config_hash: String::new(),
        seed: cfg.seed,
        variant: Some(cfg.variant),
        prediction: Some(cfg.prediction),
        step: None,
        requested: count,
        divergences: alive.iter().filter(|a| !**a).count(),
        clipped,
    };
    SampleBatch::new(n, data, meta)
}

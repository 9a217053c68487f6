//! Run configuration: TOML on disk, JSON mirror, dotted-key overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::CylinderConfig;
use crate::denoiser::{AdamConfig, MlpSpec, DEFAULT_EMBED_DIM, DEFAULT_HIDDEN};
use crate::error::{Error, Result};
use crate::loss::{LossSpec, Prediction, Variant, Weighting};
use crate::sampler::SamplerConfig;
use crate::schedule::{build_log_linear_schedule, derive_alpha_tables, ScheduleTables};
use crate::xi_noise::XiSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub prediction: Prediction,
    /// Offset / auxiliary noise scale; ignored by base and zero_snr.
    pub sigma_c_sq: f64,
    pub sigma0: f64,
    pub weighting: Weighting,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub horizon: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub balanced: bool,
    pub zero_snr: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub clip_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    /// `h = sqrt(n)`.
    SqrtN,
    /// `h^2 = sqrt(n)`.
    SqrtSqrtN,
}

impl BandwidthMode {
    pub fn bandwidth(self, n: usize) -> f64 {
        match self {
            BandwidthMode::SqrtN => (n as f64).sqrt(),
            BandwidthMode::SqrtSqrtN => (n as f64).sqrt().sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub every_steps: u64,
    pub n_generate: usize,
    pub wd_subsample: usize,
    pub mmd_bandwidth_mode: BandwidthMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: CylinderConfig,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub optimizer: OptimizerConfig,
    pub sampler: SamplerSection,
    pub eval: EvalConfig,
    /// Training data is divided by this factor and samples multiplied back.
    pub scaling_rho: f64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Config(format!("unknown profile '{s}'"))),
        }
    }
}

impl RunConfig {
    /// Scaled-down defaults: 20k steps at batch 256, evaluation every 2k steps.
    pub fn desk() -> Self {
        let adam = AdamConfig::default();
        RunConfig {
            dataset: CylinderConfig::default(),
            model: ModelConfig {
                variant: Variant::Base,
                prediction: Prediction::Eps,
                sigma_c_sq: 1.0,
                sigma0: 1.0,
                weighting: Weighting::Simple,
                embed_dim: DEFAULT_EMBED_DIM,
                hidden: DEFAULT_HIDDEN.to_vec(),
            },
            schedule: ScheduleConfig {
                horizon: 200,
                sigma_min: 0.01,
                sigma_max: 10.0,
                balanced: false,
                zero_snr: false,
            },
            optimizer: OptimizerConfig {
                lr: adam.lr,
                beta1: adam.beta1,
                beta2: adam.beta2,
                eps: adam.eps,
                batch_size: 256,
                max_steps: 20_000,
                clip_norm: 1.0,
            },
            sampler: SamplerSection {
                clip_lo: -10.0,
                clip_hi: 10.0,
                n_samples: 5000,
                seed: 0,
            },
            eval: EvalConfig {
                every_steps: 2000,
                n_generate: 2000,
                wd_subsample: 1000,
                mmd_bandwidth_mode: BandwidthMode::SqrtN,
            },
            scaling_rho: 1.0,
            master_seed: 0,
        }
    }

    /// Full-length settings: 200k steps at batch 1024, evaluation every 5k steps.
    pub fn paper() -> Self {
        let mut cfg = Self::desk();
        cfg.optimizer.batch_size = 1024;
        cfg.optimizer.max_steps = 200_000;
        cfg.eval.every_steps = 5000;
        cfg.eval.n_generate = 5000;
        cfg.eval.wd_subsample = 1024;
        cfg
    }

    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Sets the variant and the schedule flags it implies.
    pub fn with_variant(mut self, variant: Variant, prediction: Prediction) -> Self {
        self.model.variant = variant;
        self.model.prediction = prediction;
        self.schedule.balanced = variant == Variant::Proposed;
        self.schedule.zero_snr = variant == Variant::ZeroSnr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        let m = &self.model;
        let s = &self.schedule;
        if m.variant == Variant::ZeroSnr && m.prediction != Prediction::V {
            return Err(Error::Config("zero_snr requires prediction = v".into()));
        }
        if s.zero_snr != (m.variant == Variant::ZeroSnr) {
            return Err(Error::Config(
                "schedule.zero_snr must be set exactly for the zero_snr variant".into(),
            ));
        }
        if s.balanced != (m.variant == Variant::Proposed) {
            return Err(Error::Config(
                "schedule.balanced must be set exactly for the proposed variant".into(),
            ));
        }
        if !(m.sigma_c_sq.is_finite() && m.sigma_c_sq >= 0.0) {
            return Err(Error::Config("model.sigma_c_sq must be nonnegative".into()));
        }
        if !(m.sigma0.is_finite() && m.sigma0 > 0.0) {
            return Err(Error::Config("model.sigma0 must be positive".into()));
        }
        if m.variant != Variant::Proposed && m.sigma0 != 1.0 {
            return Err(Error::Config("sigma0 != 1 is only meaningful for proposed".into()));
        }
        self.mlp_spec().validate()?;
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.clip_norm > 0.0 && o.eps > 0.0) {
            return Err(Error::Config("optimizer lr, eps and clip_norm must be positive".into()));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return Err(Error::Config("optimizer betas must lie in [0, 1)".into()));
        }
        if o.batch_size == 0 {
            return Err(Error::Config("optimizer.batch_size must be positive".into()));
        }
        if !(self.sampler.clip_lo < self.sampler.clip_hi) || self.sampler.n_samples == 0 {
            return Err(Error::Config("sampler needs clip_lo < clip_hi and n_samples > 0".into()));
        }
        let e = &self.eval;
        if e.every_steps == 0 || e.n_generate == 0 || e.wd_subsample == 0 {
            return Err(Error::Config("eval settings must be positive".into()));
        }
        if !(self.scaling_rho.is_finite() && self.scaling_rho > 0.0) {
            return Err(Error::Config("scaling_rho must be positive".into()));
        }
        // builds and checks the tables
        let tables = self.tables()?;
        LossSpec::new(m.variant, m.prediction).validate(&tables, &self.xi_spec())?;
        Ok(())
    }

    pub fn tables(&self) -> Result<ScheduleTables> {
        let s = &self.schedule;
        let bs = build_log_linear_schedule(s.horizon, s.sigma_min, s.sigma_max)?;
        let plain = derive_alpha_tables(&bs, self.model.sigma0)?;
        if s.zero_snr {
            plain.zero_snr_rescaled()
        } else if s.balanced {
            plain.balanced()
        } else {
            Ok(plain)
        }
    }

    pub fn xi_spec(&self) -> XiSpec {
        match self.model.variant {
            Variant::Offset | Variant::Proposed => {
                XiSpec::correlated(self.model.sigma_c_sq, self.dataset.dim)
            }
            Variant::Base | Variant::ZeroSnr => XiSpec::delta_zero(self.dataset.dim),
        }
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            variant: self.model.variant,
            prediction: self.model.prediction,
            weighting: self.model.weighting,
        }
    }

    pub fn mlp_spec(&self) -> MlpSpec {
        MlpSpec::new(
            self.dataset.dim,
            self.model.embed_dim,
            self.model.hidden.clone(),
            self.schedule.horizon,
        )
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.optimizer.lr,
            beta1: self.optimizer.beta1,
            beta2: self.optimizer.beta2,
            eps: self.optimizer.eps,
        }
    }

    pub fn sampler_config(&self, n_samples: usize, seed: u64) -> SamplerConfig {
        SamplerConfig {
            variant: self.model.variant,
            prediction: self.model.prediction,
            clip_lo: self.sampler.clip_lo,
            clip_hi: self.sampler.clip_hi,
            n_samples,
            seed,
        }
    }

    /// Truncated SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        short_hash(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Hash of everything that determines the schedule tables.
    pub fn schedule_hash(&self) -> String {
        let key = (&self.schedule, self.model.sigma0);
        short_hash(&serde_json::to_vec(&key).expect("schedule serializes"))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `.json` files as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = if path.extension().is_some_and(|e| e == "json") {
            self.to_json()?
        } else {
            self.to_toml()?
        };
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Applies `a.b.c=value` overrides. Values are read as JSON when they
    /// parse as JSON and as bare strings otherwise.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut root = serde_json::to_value(self)?;
        for ov in overrides {
            let ov = ov.as_ref();
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{ov}' is not key=value")))?;
            let value = serde_json::from_str(raw.trim())
                .unwrap_or_else(|_| serde_json::Value::String(raw.trim().to_string()));
            let mut node = &mut root;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let obj = node
                    .as_object_mut()
                    .ok_or_else(|| Error::Config(format!("'{key}' descends into a scalar")))?;
                let child = obj
                    .get_mut(*part)
                    .ok_or_else(|| Error::Config(format!("unknown config key '{key}'")))?;
                if i + 1 == parts.len() {
                    *child = value.clone();
                    break;
                }
                node = child;
            }
        }
        serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))
    }
}

pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}

//! A plain DDPM written out longhand, compared bit for bit with the proposed
//! pipeline run with `xi = 0` and `sigma0 = 1`.

use rand::Rng;

use super::VerifyReport;
use crate::data::{cylinder_dataset, CylinderConfig};
use crate::denoiser::{Mlp, MlpSpec};
use crate::error::Result;
use crate::loss::{batch_loss, make_eps_pair_proposed, Variant, Prediction, Weighting};
use crate::rng::{fill_normal, stream, substream};
use crate::sampler::{generate, Denoise, SamplerConfig};
use crate::schedule::{build_log_linear_schedule, derive_alpha_tables};
use crate::xi_noise::XiSpec;

const CLIP: f64 = 10.0;

fn reference_tables(betas: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut alpha = vec![1.0];
    let mut alpha_bar = vec![1.0];
    for b in betas {
        let a = 1.0 - b;
        alpha.push(a);
        alpha_bar.push(alpha_bar.last().unwrap() * a);
    }
    (alpha, alpha_bar)
}

fn bits_differ(a: &[f64], b: &[f64]) -> usize {
    if a.len() != b.len() {
        return a.len().max(b.len());
    }
    a.iter().zip(b).filter(|(x, y)| x.to_bits() != y.to_bits()).count()
}

/// Three reports (pairs, loss, samples), each counting values whose bit
/// patterns differ; tolerance 0. Data is n = 2 Cylinder, T = 200 log-linear.
pub fn verify_ddpm_reduction(pairs: usize, samples: usize, seed: u64) -> Result<Vec<VerifyReport>> {
    let n = 2;
    let bs = build_log_linear_schedule(200, 0.01, 10.0)?;
    let tables = derive_alpha_tables(&bs, 1.0)?;
    let big_t = tables.horizon();
    let (alpha, alpha_bar) = reference_tables(bs.betas());
    let data = cylinder_dataset(&CylinderConfig {
        size: pairs,
        dim: n,
        seed,
        ..CylinderConfig::default()
    })?;
    let net = Mlp::<f64>::init_params(MlpSpec::new(n, 8, vec![16, 16], big_t), seed)?;
    let delta = XiSpec::delta_zero(n);

    // Training pairs: same t sequence, same noise stream for both paths.
    let mut t_rng = substream(seed, stream::TIMESTEP);
    let mut rng_a = substream(seed, stream::PAIR_NOISE);
    let mut rng_b = substream(seed, stream::PAIR_NOISE);
    let mut pair_diff = 0;
    let mut ours = Vec::with_capacity(pairs);
    let mut ref_targets = Vec::with_capacity(pairs);
    let mut ref_inputs = Vec::with_capacity(pairs);
    for i in 0..pairs {
        let x0 = data.row(i);
        let t = t_rng.random_range(1..=big_t);
        let p = make_eps_pair_proposed(x0, t, &tables, &delta, Weighting::Simple, &mut rng_a)?;

        let mut eps = vec![0.0; n];
        fill_normal(&mut rng_b, &mut eps);
        let ab = alpha_bar[t];
        let x_t: Vec<f64> = (0..n).map(|j| ab.sqrt() * x0[j] + (1.0 - ab).sqrt() * eps[j]).collect();
        pair_diff += bits_differ(&p.x_t, &x_t) + bits_differ(&p.target, &eps);
        if p.t != t || p.weight != 1.0 {
            pair_diff += 1;
        }
        ours.push(p);
        ref_targets.push(eps);
        ref_inputs.push((x_t, t));
    }

    let preds: Vec<Vec<f64>> = ours.iter().map(|p| net.predict(&p.x_t, p.t)).collect::<Result<_>>()?;
    let loss_ours = batch_loss(&ours, &preds)?;
    let mut total = 0.0;
    for ((x_t, t), eps) in ref_inputs.iter().zip(&ref_targets) {
        let e_hat = net.predict(x_t, *t)?;
        let sq: f64 = eps.iter().zip(&e_hat).map(|(a, b)| (a - b) * (a - b)).sum();
        total += sq;
    }
    let loss_ref = total / pairs as f64;
    let loss_diff = usize::from(loss_ours.to_bits() != loss_ref.to_bits());

    // Sampling: chain i owns stream SAMPLER_BASE + i; x_T ~ N(0, I), then
    // x_{t-1} = clip(x_t / sqrt(a) - (1 - a) / (sqrt(1 - ab) sqrt(a)) eps_hat + sqrt(beta) z).
    let cfg = SamplerConfig::new(Variant::Proposed, Prediction::Eps, samples, seed);
    let got = generate(&net, &tables, &delta, &cfg)?;
    let mut rngs: Vec<_> = (0..samples).map(|i| substream(seed, stream::SAMPLER_BASE + i as u64)).collect();
    let mut x = vec![0.0; samples * n];
    for (i, r) in rngs.iter_mut().enumerate() {
        fill_normal(r, &mut x[i * n..(i + 1) * n]);
    }
    let mut z = vec![0.0; n];
    for t in (1..=big_t).rev() {
        let e_hat = net.predict(&x, t)?;
        let (a, ab) = (alpha[t], alpha_bar[t]);
        let c_x = 1.0 / a.sqrt();
        let c_e = (1.0 - a) / ((1.0 - ab).sqrt() * a.sqrt());
        let sd = (1.0 - a).sqrt();
        for (i, r) in rngs.iter_mut().enumerate() {
            fill_normal(r, &mut z);
            for j in 0..n {
                let k = i * n + j;
                let mean = c_x * x[k] - c_e * e_hat[k];
                x[k] = (mean + sd * z[j]).clamp(-CLIP, CLIP);
            }
        }
    }
    let sample_diff = bits_differ(&got.data, &x) + got.meta.divergences;

    Ok(vec![
        VerifyReport::new("ddpm_reduction_pairs", pair_diff as f64, 0.0, pairs, seed),
        VerifyReport::new("ddpm_reduction_loss", loss_diff as f64, 0.0, pairs, seed),
        VerifyReport::new("ddpm_reduction_samples", sample_diff as f64, 0.0, samples, seed),
    ])
}

//! Posterior `q(x_{t-1} | x_t, x0, xi)` as a product of two Gaussians in `x_{t-1}`.

use rand::Rng;

use super::VerifyReport;
use crate::error::Result;
use crate::process::posterior_params;
use crate::rng::{normal, substream};
use crate::schedule::ScheduleTables;

/// For `n = 1` and every `t in 2..=T` (`draws` random `(x_t, x0, xi)` each),
/// multiplies the prior `N(x_{t-1}; sqrt(ab_{t-1}) x0 + sqrt(1 - ab_{t-1}) psi_{t-1} xi, (1 - ab_{t-1}) s0^2)`
/// by the step likelihood `N(x_t; sqrt(a_t)(x_{t-1} + gamma_t xi), (1 - a_t) s0^2)`
/// as a precision-weighted average and compares mean and variance with the implementation,
/// relative to `max(1, |value|)`.
pub fn verify_posterior(tables: &ScheduleTables, draws: usize, seed: u64) -> Result<VerifyReport> {
    let gamma = tables.gammas();
    let s2 = tables.sigma0() * tables.sigma0();
    let mut rng = substream(seed, 0x90);

    let mut ab_prev = 1.0f64;
    let mut psi_prev = 0.0f64;
    let mut worst = 0.0f64;
    let mut count = 0;
    for (i, b) in tables.betas().iter().enumerate() {
        let t = i + 1;
        let a = 1.0 - b;
        let ab = ab_prev * a;
        if t >= 2 {
            let prior_var = (1.0 - ab_prev) * s2;
            // likelihood as a density in x_{t-1}: mean x_t / sqrt(a) - gamma xi, variance (1 - a) s0^2 / a
            let lik_var = (1.0 - a) * s2 / a;
            let var = prior_var * lik_var / (prior_var + lik_var);
            let w_prior = lik_var / (prior_var + lik_var);
            for _ in 0..draws {
                let x0 = normal(&mut rng);
                let xi = normal(&mut rng);
                let x_t = 3.0 * rng.random_range(-1.0..1.0);
                let prior_mean = ab_prev.sqrt() * x0 + (1.0 - ab_prev).sqrt() * psi_prev * xi;
                let lik_mean = x_t / a.sqrt() - gamma[t] * xi;
                let mean = w_prior * prior_mean + (1.0 - w_prior) * lik_mean;
                let (m, v) = posterior_params(&[x_t], &[x0], &[xi], t, tables)?;
                worst = worst
                    .max((m[0] - mean).abs() / mean.abs().max(1.0))
                    .max((v - var).abs() / var.max(1.0));
                count += 1;
            }
        }
        psi_prev = (a.sqrt() * (1.0 - ab_prev).sqrt() * psi_prev + a.sqrt() * gamma[t]) / (1.0 - ab).sqrt();
        ab_prev = ab;
    }
    let kind = format!("{:?}", tables.gamma_kind()).to_lowercase();
    Ok(VerifyReport::new(
        format!("posterior_gaussian_product[{kind},s0={}]", tables.sigma0()),
        worst,
        1e-12,
        count,
        seed,
    ))
}

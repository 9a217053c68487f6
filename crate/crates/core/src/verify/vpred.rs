//! v-prediction identities: `x0` reconstruction, reverse-mean equivalence and
//! the v weighting.

use rand::Rng;

use super::VerifyReport;
use crate::error::{Error, Result};
use crate::process::{mu_from_v, x0_from_v};
use crate::rng::{normal, substream};
use crate::schedule::ScheduleTables;

/// Over `trials` random `(t, x0, eps0, xi)`:
/// - `x0 == sqrt(ab_t) x_t - sqrt(1 - ab_t) v_t` via the implementation;
/// - `mu_from_v(x_t, v_t)` equals the posterior mean (`t >= 2`) or `x0` (`t = 1`);
/// - `lambda_v(t) == ab_{t-1} (1 - a_t)^2 / (2 sigma_t^2 (1 - ab_t)) == ab_t lambda_eps(t)`.
///
/// Also reconstructs `x0` on the zero-SNR rescale of the same betas for `t < T`.
/// Tables whose posterior depends on `xi` are rejected.
pub fn verify_vpred_identities(tables: &ScheduleTables, trials: usize, seed: u64) -> Result<Vec<VerifyReport>> {
    if !tables.is_xi_free_posterior() {
        return Err(Error::Unsupported("v-prediction identities need zero or balanced gamma".into()));
    }
    let big_t = tables.horizon();
    let mut al = vec![1.0f64; big_t + 1];
    let mut ab = vec![1.0f64; big_t + 1];
    for (i, b) in tables.betas().iter().enumerate() {
        al[i + 1] = 1.0 - b;
        ab[i + 1] = ab[i] * al[i + 1];
    }
    let gamma = tables.gammas();
    let psi = |t: usize| -> f64 {
        let s: f64 = (1..=t).map(|i| (ab[t] / ab[i - 1]).sqrt() * gamma[i]).sum();
        s / (1.0 - ab[t]).sqrt()
    };
    let s0 = tables.sigma0();

    let mut rng = substream(seed, 0x5e);
    let (mut w_rec, mut w_mu) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let t = rng.random_range(1..=big_t);
        let (x0, e0, xi) = (normal(&mut rng), normal(&mut rng), normal(&mut rng));
        let noise = s0 * e0 + psi(t) * xi;
        let x_t = ab[t].sqrt() * x0 + (1.0 - ab[t]).sqrt() * noise;
        let v = ab[t].sqrt() * noise - (1.0 - ab[t]).sqrt() * x0;

        let rec = x0_from_v(&[x_t], &[v], t, tables)?[0];
        w_rec = w_rec.max((rec - x0).abs() / x0.abs().max(1.0));

        let want = if t == 1 {
            x0
        } else {
            let (a, abp) = (al[t], ab[t - 1]);
            let nu = ((1.0 - a) * (1.0 - abp).sqrt() * psi(t - 1) - a * (1.0 - abp) * gamma[t]) / (1.0 - ab[t]);
            a.sqrt() * (1.0 - abp) / (1.0 - ab[t]) * x_t + (1.0 - a) * abp.sqrt() / (1.0 - ab[t]) * x0 + nu * xi
        };
        let got = mu_from_v(&[x_t], &[v], t, tables)?[0];
        w_mu = w_mu.max((got - want).abs() / want.abs().max(1.0));
    }

    let mut w_lam = 0.0f64;
    for t in 1..=big_t {
        let s2 = tables.sigma_rev_sq(t);
        let lv = ab[t - 1] * (1.0 - al[t]).powi(2) / (2.0 * s2 * (1.0 - ab[t]));
        let rel = |x: f64| (x - lv).abs() / lv.abs().max(f64::MIN_POSITIVE);
        w_lam = w_lam.max(rel(tables.lambda_v(t))).max(rel(ab[t] * tables.lambda_eps(t)));
    }

    // Zero-SNR: alpha_bar_T = 0, reconstruction must hold below T.
    let z = tables.zero_snr_rescaled()?;
    let mut w_zero = 0.0f64;
    for _ in 0..trials {
        let t = rng.random_range(1..big_t.max(2));
        if t >= big_t {
            continue;
        }
        let (x0, e0) = (normal(&mut rng), normal(&mut rng));
        let abz = z.alpha_bar(t);
        let x_t = abz.sqrt() * x0 + (1.0 - abz).sqrt() * e0;
        let v = abz.sqrt() * e0 - (1.0 - abz).sqrt() * x0;
        let rec = x0_from_v(&[x_t], &[v], t, &z)?[0];
        w_zero = w_zero.max((rec - x0).abs() / x0.abs().max(1.0));
    }

    Ok(vec![
        VerifyReport::new("vpred_x0_reconstruction", w_rec, 1e-9, trials, seed),
        VerifyReport::new("vpred_mean_equivalence", w_mu, 1e-9, trials, seed),
        VerifyReport::new("vpred_lambda_v", w_lam, 1e-9, big_t, seed),
        VerifyReport::new("vpred_zero_snr_reconstruction", w_zero, 1e-9, trials, seed),
    ])
}

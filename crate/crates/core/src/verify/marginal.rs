//! Moments of `x_t` from the sequential chain and from the closed form,
//! against the theoretical Gaussian.

use super::VerifyReport;
use crate::error::Result;
use crate::process::{forward_marginal, forward_step};
use crate::rng::substream;
use crate::schedule::ScheduleTables;
use crate::xi_noise::XiSpec;

pub const CHECK_TIMES: [usize; 4] = [1, 50, 100, 200];

/// Runs `draws` chains of `forward_step` from a fixed `x0` (fresh
/// `xi ~ N(0, sigma_c_sq 11^T)` each) and `draws` closed-form samples. At
/// each checked `t <= T` every component's sample mean and variance is
/// compared with `mean = sqrt(ab_t) x0`, `var = (1 - ab_t)(s0^2 + psi_t^2 sigma_c_sq)`.
/// The reported error is the largest deviation in standard errors.
pub fn verify_marginal_composition(
    tables: &ScheduleTables,
    sigma_c_sq: f64,
    n: usize,
    draws: usize,
    seed: u64,
) -> Result<VerifyReport> {
    let big_t = tables.horizon();
    let times: Vec<usize> = CHECK_TIMES.iter().copied().filter(|t| *t <= big_t).collect();
    let x0: Vec<f64> = (0..n).map(|j| 0.5 - j as f64).collect();
    let spec = XiSpec::correlated(sigma_c_sq, n);

    let mut ab = vec![1.0f64; big_t + 1];
    for (i, b) in tables.betas().iter().enumerate() {
        ab[i + 1] = ab[i] * (1.0 - b);
    }
    let gamma = tables.gammas();
    let s0 = tables.sigma0();
    let theory = |t: usize| -> (f64, f64) {
        let s: f64 = (1..=t).map(|i| (ab[t] / ab[i - 1]).sqrt() * gamma[i]).sum();
        let psi = s / (1.0 - ab[t]).sqrt();
        (ab[t].sqrt(), (1.0 - ab[t]) * (s0 * s0 + psi * psi * sigma_c_sq))
    };

    // [time][component] -> (sum, sum of squares)
    let mut seq = vec![vec![(0.0f64, 0.0f64); n]; times.len()];
    let mut closed = seq.clone();
    let mut rng = substream(seed, 0x3a);
    for _ in 0..draws {
        let xi = spec.sample(&mut rng);
        let mut x = x0.clone();
        let mut k = 0;
        for t in 1..=big_t {
            x = forward_step(&x, &xi, t, tables, &mut rng)?;
            if k < times.len() && times[k] == t {
                for (acc, v) in seq[k].iter_mut().zip(&x) {
                    acc.0 += v;
                    acc.1 += v * v;
                }
                k += 1;
            }
            if k == times.len() {
                break;
            }
        }
        for (k, &t) in times.iter().enumerate() {
            let xi = spec.sample(&mut rng);
            let y = forward_marginal(&x0, &xi, t, tables, &mut rng)?;
            for (acc, v) in closed[k].iter_mut().zip(&y) {
                acc.0 += v;
                acc.1 += v * v;
            }
        }
    }

    let nd = draws as f64;
    let mut worst = 0.0f64;
    for (k, &t) in times.iter().enumerate() {
        let (scale, var) = theory(t);
        for j in 0..n {
            let mean = scale * x0[j];
            for acc in [seq[k][j], closed[k][j]] {
                let m = acc.0 / nd;
                let v = (acc.1 - nd * m * m) / (nd - 1.0);
                let z_mean = (m - mean).abs() / (var / nd).sqrt();
                let z_var = (v - var).abs() / (var * (2.0 / (nd - 1.0)).sqrt());
                worst = worst.max(z_mean).max(z_var);
            }
        }
    }
    Ok(VerifyReport::new(
        format!("marginal_composition[n={n},s0={s0}]"),
        worst,
        4.0,
        draws,
        seed,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_log_linear_schedule, derive_alpha_tables};

    #[test]
    fn sigma0_two_and_delta() {
        let bs = build_log_linear_schedule(200, 0.01, 10.0).unwrap();
        let tab = derive_alpha_tables(&bs, 2.0).unwrap().balanced().unwrap();
        let r = verify_marginal_composition(&tab, 0.5, 1, 20_000, 7).unwrap();
        assert!(r.passed, "{}", r.line());
        let plain = derive_alpha_tables(&bs, 1.0).unwrap();
        let r = verify_marginal_composition(&plain, 0.0, 1, 20_000, 8).unwrap();
        assert!(r.passed, "{}", r.line());
    }
}

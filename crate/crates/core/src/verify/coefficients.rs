//! `phi_t = psi_t - sqrt(1 - ab_t) sqrt(a_t) / (1 - a_t) * nu_t`, and the
//! eps form of the posterior mean against its `(x_t, x0, xi)` form.

use rand::Rng;

use super::VerifyReport;
use crate::error::Result;
use crate::process::{mu_from_eps, posterior_params};
use crate::rng::{normal, substream};
use crate::schedule::ScheduleTables;

/// Copy of `tables` with `gamma_t ~ U(0, 0.02)` drawn from `seed`.
pub fn random_gamma(tables: &ScheduleTables, seed: u64) -> Result<ScheduleTables> {
    let mut rng = substream(seed, 0x6a);
    let g: Vec<f64> = (0..tables.horizon()).map(|_| rng.random_range(0.0..0.02)).collect();
    tables.with_gamma(&g)
}

/// Two reports: the coefficient identity over `t = 2..=T` (relative to
/// `max(1, |phi_t|)`, tolerance 1e-10) and the two mean forms over
/// `trials` random tuples (tolerance 1e-9).
pub fn verify_coefficient_identity(tables: &ScheduleTables, trials: usize, seed: u64) -> Result<Vec<VerifyReport>> {
    let big_t = tables.horizon();
    let mut worst_id = 0.0f64;
    for t in 2..=big_t {
        let (a, ab) = (tables.alpha(t), tables.alpha_bar(t));
        let rhs = tables.psi(t) - (1.0 - ab).sqrt() * a.sqrt() / (1.0 - a) * tables.nu(t)?;
        let phi = tables.phi(t);
        worst_id = worst_id.max((phi - rhs).abs() / phi.abs().max(1.0));
    }

    // Oracle side: alpha tables rebuilt from the betas.
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

    let mut rng = substream(seed, 0x1e);
    let mut worst_mean = 0.0f64;
    for _ in 0..trials {
        let t = rng.random_range(2..=big_t);
        let (x0, xi, e0) = (normal(&mut rng), normal(&mut rng), normal(&mut rng));
        let (a, abt, abp) = (al[t], ab[t], ab[t - 1]);
        let (psi_t, psi_p) = (psi(t), psi(t - 1));
        let x_t = abt.sqrt() * x0 + (1.0 - abt).sqrt() * (s0 * e0 + psi_t * xi);
        let phi_t = a.sqrt() * (1.0 - abt).sqrt() / (1.0 - a) * gamma[t];
        let nu_t = ((1.0 - a) * (1.0 - abp).sqrt() * psi_p - a * (1.0 - abp) * gamma[t]) / (1.0 - abt);

        let posterior_form =
            a.sqrt() * (1.0 - abp) / (1.0 - abt) * x_t + (1.0 - a) * abp.sqrt() / (1.0 - abt) * x0 + nu_t * xi;
        let eps_form =
            x_t / a.sqrt() - (1.0 - a) / ((1.0 - abt).sqrt() * a.sqrt()) * (s0 * e0 + phi_t * xi);

        let impl_posterior = posterior_params(&[x_t], &[x0], &[xi], t, tables)?.0[0];
        let impl_eps = mu_from_eps(&[x_t], &[s0 * e0 + tables.phi(t) * xi], t, tables)?[0];
        let scale = posterior_form.abs().max(1.0);
        for gap in [
            posterior_form - eps_form,
            impl_posterior - eps_form,
            impl_eps - posterior_form,
        ] {
            worst_mean = worst_mean.max(gap.abs() / scale);
        }
    }
    let kind = format!("{:?}", tables.gamma_kind()).to_lowercase();
    Ok(vec![
        VerifyReport::new(format!("coefficient_identity[{kind}]"), worst_id, 1e-10, big_t - 1, seed),
        VerifyReport::new(format!("posterior_mean_forms[{kind}]"), worst_mean, 1e-9, trials, seed),
    ])
}

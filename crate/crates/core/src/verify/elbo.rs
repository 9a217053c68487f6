//! The `t = 1` likelihood term in eps form.

use super::VerifyReport;
use crate::denoiser::{Mlp, MlpSpec};
use crate::error::Result;
use crate::process::mu_from_eps;
use crate::rng::{fill_normal, substream};
use crate::sampler::Denoise;
use crate::schedule::ScheduleTables;

/// With a fixed random network, checks per draw that
/// `-||x0 - mu(x_1)||^2 / (2 sigma_1^2) == -lambda_1 ||s0 eps0 + phi_1 xi - eps_hat(x_1)||^2`,
/// where the left side uses `mu` from the implementation and the right side
/// uses the oracle's own `lambda_1` and `phi_1`. The identity is exact, so
/// the gap is reported relative to the magnitude of the terms. Also checks
/// `phi_1 == psi_1`.
pub fn verify_elbo_l1(tables: &ScheduleTables, draws: usize, seed: u64) -> Result<VerifyReport> {
    let n = 1;
    let net = Mlp::<f64>::init_params(MlpSpec::new(n, 8, vec![16, 16], tables.horizon()), seed)?;
    let b = tables.betas()[0];
    let a = 1.0 - b;
    let ab = a;
    let s0 = tables.sigma0();
    let sigma_sq = tables.sigma_rev_sq(1);
    let lambda = (1.0 - a) * (1.0 - a) / (2.0 * sigma_sq * a * (1.0 - ab));
    let g1 = tables.gammas()[1];
    let phi1 = a.sqrt() * (1.0 - ab).sqrt() / (1.0 - a) * g1;
    let psi1 = a.sqrt() / (1.0 - ab).sqrt() * g1;

    let mut rng = substream(seed, 0xe1);
    let mut z = [0.0f64; 3];
    let mut worst = (phi1 - psi1).abs() / phi1.abs().max(1.0);
    for _ in 0..draws {
        fill_normal(&mut rng, &mut z);
        let (x0, e0, xi) = (z[0], z[1], z[2]);
        let x1 = ab.sqrt() * x0 + (1.0 - ab).sqrt() * (s0 * e0 + psi1 * xi);
        let eps_hat = net.predict(&[x1], 1)?[0];
        let mu = mu_from_eps(&[x1], &[eps_hat], 1, tables)?[0];
        let lhs = -(x0 - mu).powi(2) / (2.0 * sigma_sq);
        let rhs = -lambda * (s0 * e0 + phi1 * xi - eps_hat).powi(2);
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
    }
    Ok(VerifyReport::new("elbo_l1_eps_form", worst, 1e-9, draws, seed))
}

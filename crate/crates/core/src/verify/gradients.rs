//! Central finite differences on the full training loss for every
//! variant / prediction combination.

use super::VerifyReport;
use crate::denoiser::{Batch, Mlp, MlpSpec};
use crate::error::{Error, Result};
use crate::loss::{make_pair, LossSpec, Prediction, Variant, Weighting};
use crate::rng::{normal, substream};
use crate::schedule::{build_log_linear_schedule, derive_alpha_tables, ScheduleTables};
use crate::xi_noise::XiSpec;

pub const FD_STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-5;

/// `|a - b| / max(|a| + |b|, 1e-7)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-7)
}

fn tables_for(variant: Variant) -> Result<ScheduleTables> {
    let base = derive_alpha_tables(&build_log_linear_schedule(20, 0.01, 10.0)?, 1.0)?;
    match variant {
        Variant::Base | Variant::Offset => Ok(base),
        Variant::Proposed => base.balanced(),
        Variant::ZeroSnr => base.zero_snr_rescaled(),
    }
}

/// Largest relative error between analytic and finite-difference gradients
/// for one combination, on a 4-4 network with `n = 2` and ELBO weights.
pub fn fd_check(variant: Variant, prediction: Prediction, seed: u64) -> Result<f64> {
    let n = 2;
    let tables = tables_for(variant)?;
    let xi = match variant {
        Variant::Offset | Variant::Proposed => XiSpec::correlated(1.0, n),
        _ => XiSpec::delta_zero(n),
    };
    let loss = LossSpec {
        variant,
        prediction,
        weighting: Weighting::Elbo,
    };
    loss.validate(&tables, &xi)?;

    let mut rng = substream(seed, 0x9d);
    let mut pairs = Vec::new();
    for i in 0..8 {
        let x0 = [normal(&mut rng), normal(&mut rng)];
        let t = 1 + (i * 7) % tables.horizon();
        pairs.push(make_pair(&loss, &x0, t, &tables, &xi, &mut rng)?);
    }
    let batch = Batch::<f64>::from_pairs(&pairs);
    let mut net = Mlp::<f64>::init_params(MlpSpec::new(n, 4, vec![4, 4], tables.horizon()), seed)?;
    let (_, grad) = net.loss_and_grad(&batch)?;

    let mut worst = 0.0f64;
    for k in 0..net.num_params() {
        let orig = net.params()[k];
        net.params_mut()[k] = orig + FD_STEP;
        let (up, _) = net.loss_and_grad(&batch)?;
        net.params_mut()[k] = orig - FD_STEP;
        let (down, _) = net.loss_and_grad(&batch)?;
        net.params_mut()[k] = orig;
        let fd = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(grad[k], fd));
    }
    Ok(worst)
}

/// One report per valid combination, plus one confirming that zero-SNR with
/// eps-prediction is refused.
pub fn verify_gradients(seed: u64) -> Result<Vec<VerifyReport>> {
    let mut out = Vec::new();
    for v in Variant::ALL {
        for p in [Prediction::Eps, Prediction::V] {
            let name = format!("fd_gradient[{v}-{p}]");
            match fd_check(v, p, seed) {
                Ok(err) => out.push(VerifyReport::new(name, err, TOLERANCE, 1, seed)),
                Err(Error::Unsupported(_)) if v == Variant::ZeroSnr && p == Prediction::Eps => {
                    out.push(VerifyReport::new(format!("{name}:rejected"), 0.0, 0.0, 0, seed))
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

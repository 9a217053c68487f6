//! Forward chain, closed-form marginal, tractable posterior and the two
//! reverse-mean parameterisations.
//!
//! Every function has a `*_with_noise` twin that takes the Gaussian draws
//! explicitly; the RNG versions draw them in a fixed order and delegate.

use rand::Rng;

use crate::error::{check_timestep, Error, Result};
use crate::rng::fill_normal;
use crate::schedule::ScheduleTables;
use crate::xi_noise::{AuxNoise, XiSpec};

/// A point of the chain together with its timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVec {
    pub x: Vec<f64>,
    pub t: usize,
}

fn same_len(what: &str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "{what}: lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `sqrt(alpha_t) (x_{t-1} + gamma_t xi) + sqrt(beta_t) sigma0 eps`.
pub fn forward_step_with_noise(
    x_prev: &[f64],
    xi: &[f64],
    eps: &[f64],
    t: usize,
    tables: &ScheduleTables,
) -> Result<Vec<f64>> {
    tables.check_t(t)?;
    same_len("forward_step xi", x_prev, xi)?;
    same_len("forward_step eps", x_prev, eps)?;
    let a = tables.alpha(t).sqrt();
    let g = tables.gamma(t);
    let s = tables.beta(t).sqrt() * tables.sigma0();
    Ok(x_prev
        .iter()
        .zip(xi)
        .zip(eps)
        .map(|((x, k), e)| a * (x + g * k) + s * e)
        .collect())
}

pub fn forward_step<R: Rng + ?Sized>(
    x_prev: &[f64],
    xi: &[f64],
    t: usize,
    tables: &ScheduleTables,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut eps = vec![0.0; x_prev.len()];
    fill_normal(rng, &mut eps);
    forward_step_with_noise(x_prev, xi, &eps, t, tables)
}

/// `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) (sigma0 eps0 + psi_t xi)`.
pub fn forward_marginal_with_noise(
    x0: &[f64],
    xi: &[f64],
    eps0: &[f64],
    t: usize,
    tables: &ScheduleTables,
) -> Result<Vec<f64>> {
    tables.check_t(t)?;
    same_len("forward_marginal xi", x0, xi)?;
    same_len("forward_marginal eps", x0, eps0)?;
    let ab = tables.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (s0, psi) = (tables.sigma0(), tables.psi(t));
    Ok(x0
        .iter()
        .zip(xi)
        .zip(eps0)
        .map(|((x, k), e)| sa * x + sn * (s0 * e + psi * k))
        .collect())
}

pub fn forward_marginal<R: Rng + ?Sized>(
    x0: &[f64],
    xi: &[f64],
    t: usize,
    tables: &ScheduleTables,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut eps = vec![0.0; x0.len()];
    fill_normal(rng, &mut eps);
    forward_marginal_with_noise(x0, xi, &eps, t, tables)
}

/// Mean and variance of `q(x_{t-1} | x_t, x0, xi)` for `t >= 2`.
pub fn posterior_params(
    x_t: &[f64],
    x0: &[f64],
    xi: &[f64],
    t: usize,
    tables: &ScheduleTables,
) -> Result<(Vec<f64>, f64)> {
    check_timestep(t, 2, tables.horizon())?;
    same_len("posterior x0", x_t, x0)?;
    same_len("posterior xi", x_t, xi)?;
    let (a, ab, ab_prev) = (tables.alpha(t), tables.alpha_bar(t), tables.alpha_bar(t - 1));
    let cx = a.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    let c0 = (1.0 - a) * ab_prev.sqrt() / (1.0 - ab);
    let nu = tables.nu(t)?;
    let mean = x_t
        .iter()
        .zip(x0)
        .zip(xi)
        .map(|((xt, x0), k)| cx * xt + c0 * x0 + nu * k)
        .collect();
    Ok((mean, tables.beta_tilde(t)?))
}

/// Reverse mean written as `x_coef * x_t - pred_coef * prediction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCoefs {
    pub x_coef: f64,
    pub pred_coef: f64,
}

impl MeanCoefs {
    pub fn apply(&self, x_t: &[f64], pred: &[f64]) -> Vec<f64> {
        x_t.iter()
            .zip(pred)
            .map(|(x, p)| self.x_coef * x - self.pred_coef * p)
            .collect()
    }
}

/// `mu = x_t / sqrt(alpha_t) - (1 - alpha_t) / (sqrt(1 - alpha_bar_t) sqrt(alpha_t)) * eps`.
pub fn eps_mean_coefs(tables: &ScheduleTables, t: usize) -> Result<MeanCoefs> {
    tables.check_t(t)?;
    if tables.is_zero_snr() {
        return Err(Error::Unsupported(
            "epsilon-prediction with zero terminal SNR tables".into(),
        ));
    }
    let (a, ab) = (tables.alpha(t), tables.alpha_bar(t));
    if !(a > 0.0 && ab < 1.0) {
        return Err(Error::DegenerateSchedule(format!(
            "epsilon mean undefined at t={t} (alpha={a}, alpha_bar={ab})"
        )));
    }
    Ok(MeanCoefs {
        x_coef: 1.0 / a.sqrt(),
        pred_coef: (1.0 - a) / ((1.0 - ab).sqrt() * a.sqrt()),
    })
}

/// `mu = ((sqrt(a)(1 - ab_prev) + (1 - a) sqrt(ab_prev ab)) / (1 - ab)) x_t
///       - ((1 - a) sqrt(ab_prev) / sqrt(1 - ab)) v`.
pub fn v_mean_coefs(tables: &ScheduleTables, t: usize) -> Result<MeanCoefs> {
    tables.check_t(t)?;
    let (a, ab, ab_prev) = (tables.alpha(t), tables.alpha_bar(t), tables.alpha_bar(t - 1));
    if ab >= 1.0 {
        return Err(Error::DegenerateSchedule(format!(
            "v mean undefined at t={t} (alpha_bar={ab})"
        )));
    }
    Ok(MeanCoefs {
        x_coef: (a.sqrt() * (1.0 - ab_prev) + (1.0 - a) * (ab_prev * ab).sqrt()) / (1.0 - ab),
        pred_coef: (1.0 - a) * ab_prev.sqrt() / (1.0 - ab).sqrt(),
    })
}

pub fn mu_from_eps(
    x_t: &[f64],
    eps_hat: &[f64],
    t: usize,
    tables: &ScheduleTables,
) -> Result<Vec<f64>> {
    same_len("mu_from_eps", x_t, eps_hat)?;
    Ok(eps_mean_coefs(tables, t)?.apply(x_t, eps_hat))
}

pub fn mu_from_v(x_t: &[f64], v_hat: &[f64], t: usize, tables: &ScheduleTables) -> Result<Vec<f64>> {
    same_len("mu_from_v", x_t, v_hat)?;
    Ok(v_mean_coefs(tables, t)?.apply(x_t, v_hat))
}

/// `x0 = sqrt(alpha_bar_t) x_t - sqrt(1 - alpha_bar_t) v_t`.
pub fn x0_from_v(x_t: &[f64], v: &[f64], t: usize, tables: &ScheduleTables) -> Result<Vec<f64>> {
    tables.check_t(t)?;
    same_len("x0_from_v", x_t, v)?;
    let ab = tables.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x_t.iter().zip(v).map(|(x, v)| a * x - b * v).collect())
}

/// Draws `xi ~ q(xi)` and then `x_T ~ N(xi, sigma0^2 I)`. Returns `(x_T, xi)`.
pub fn reverse_init<R: Rng + ?Sized>(
    spec: &XiSpec,
    tables: &ScheduleTables,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    let mut xi = vec![0.0; spec.dim()];
    spec.sample_into(rng, &mut xi);
    let mut z = vec![0.0; spec.dim()];
    fill_normal(rng, &mut z);
    let s0 = tables.sigma0();
    let x = xi.iter().zip(&z).map(|(k, z)| k + s0 * z).collect();
    Ok((x, xi))
}

//! Independent oracles for the derivations the rest of the crate relies on.
//!
//! Every check recomputes what it needs from raw `beta` and `gamma` values
//! with plain arithmetic in its own file and compares against the
//! implementation's answer.

pub mod balance;
pub mod coefficients;
pub mod ddpm_ref;
pub mod elbo;
pub mod gradients;
pub mod marginal;
pub mod posterior;
pub mod psi;
pub mod vpred;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::schedule::{build_log_linear_schedule, derive_alpha_tables, sd15_schedule, ScheduleTables};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub name: String,
    pub passed: bool,
    /// Measured discrepancy, in the units of `tolerance`.
    pub error: f64,
    pub tolerance: f64,
    pub samples: usize,
    /// Seed that reproduces the check.
    pub seed: u64,
}

impl VerifyReport {
    pub fn new(name: impl Into<String>, error: f64, tolerance: f64, samples: usize, seed: u64) -> Self {
        VerifyReport {
            name: name.into(),
            passed: error.is_finite() && error <= tolerance,
            error,
            tolerance,
            samples,
            seed,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<40} error={:.3e} tol={:.1e} samples={} seed={}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.error,
            self.tolerance,
            self.samples,
            self.seed
        )
    }
}

/// T = 200 log-linear tables with `sigma0 = 1` and zero gamma.
pub fn log_linear_200() -> Result<ScheduleTables> {
    derive_alpha_tables(&build_log_linear_schedule(200, 0.01, 10.0)?, 1.0)
}

/// T = 1000 Stable-Diffusion-style tables with `sigma0 = 1` and zero gamma.
pub fn sd_1000() -> Result<ScheduleTables> {
    derive_alpha_tables(&sd15_schedule(), 1.0)
}

/// Every check at its default size.
pub fn run_all(seed: u64) -> Result<Vec<VerifyReport>> {
    let ll = log_linear_200()?;
    let sd = sd_1000()?;
    let (ll_bal, sd_bal) = (ll.balanced()?, sd.balanced()?);
    let t1 = derive_alpha_tables(&build_log_linear_schedule(1, 0.01, 10.0)?, 1.0)?.balanced()?;

    let mut out = Vec::new();
    out.extend(balance::verify_balanced(&ll_bal, "loglinear200"));
    out.extend(balance::verify_balanced(&sd_bal, "sd1000"));
    out.push(psi::verify_psi_direct_vs_recursive(&t1, "T1"));
    out.push(psi::verify_psi_direct_vs_recursive(&ll_bal, "loglinear200"));
    out.push(psi::verify_psi_direct_vs_recursive(&sd_bal, "sd1000"));
    out.extend(ddpm_ref::verify_ddpm_reduction(1000, 100, seed)?);
    out.extend(gradients::verify_gradients(seed)?);
    out.push(marginal::verify_marginal_composition(&ll_bal, 1.0, 2, 100_000, seed)?);
    out.push(posterior::verify_posterior(&ll_bal, 10, seed)?);
    let ll_s2 = derive_alpha_tables(&build_log_linear_schedule(200, 0.01, 10.0)?, 2.0)?;
    out.push(posterior::verify_posterior(&coefficients::random_gamma(&ll_s2, seed)?, 10, seed)?);
    out.extend(coefficients::verify_coefficient_identity(&ll_bal, 1000, seed)?);
    out.extend(coefficients::verify_coefficient_identity(&coefficients::random_gamma(&ll, seed)?, 1000, seed)?);
    out.extend(vpred::verify_vpred_identities(&ll_bal, 1000, seed)?);
    out.push(elbo::verify_elbo_l1(&ll_bal, 1000, seed)?);
    Ok(out)
}

pub fn write_reports(path: &Path, reports: &[VerifyReport]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(reports)?)?;
    Ok(())
}

//! Balanced-gamma preconditions: `phi == psi`, `psi_T == 1`, `nu == 0`.

use super::VerifyReport;
use crate::schedule::ScheduleTables;

/// Recomputes `phi`, `psi` (direct sum) and `nu` from the betas and the
/// table's gamma, and reports the three residuals. Each residual is the
/// larger of the oracle's and the table's own.
pub fn verify_balanced(tables: &ScheduleTables, label: &str) -> Vec<VerifyReport> {
    let big_t = tables.horizon();
    let gamma = tables.gammas();
    let mut a = vec![1.0f64; big_t + 1];
    let mut ab = vec![1.0f64; big_t + 1];
    for (t, b) in tables.betas().iter().enumerate() {
        a[t + 1] = 1.0 - b;
        ab[t + 1] = ab[t] * a[t + 1];
    }
    let psi: Vec<f64> = (0..=big_t)
        .map(|t| {
            if t == 0 {
                return 0.0;
            }
            let s: f64 = (1..=t).map(|i| (ab[t] / ab[i - 1]).sqrt() * gamma[i]).sum();
            s / (1.0 - ab[t]).sqrt()
        })
        .collect();
    let mut phi_psi = 0.0f64;
    let mut nu_max = 0.0f64;
    for t in 1..=big_t {
        let phi = a[t].sqrt() * (1.0 - ab[t]).sqrt() / (1.0 - a[t]) * gamma[t];
        phi_psi = phi_psi.max((phi - psi[t]).abs());
        if t >= 2 {
            let nu = ((1.0 - a[t]) * (1.0 - ab[t - 1]).sqrt() * psi[t - 1]
                - a[t] * (1.0 - ab[t - 1]) * gamma[t])
                / (1.0 - ab[t]);
            nu_max = nu_max.max(nu.abs());
        }
    }
    let psi_end = (psi[big_t] - 1.0).abs();
    let (own_pp, own_end, own_nu) = tables.balance_residuals();
    vec![
        VerifyReport::new(format!("balance_phi_eq_psi[{label}]"), phi_psi.max(own_pp), 1e-10, big_t, 0),
        VerifyReport::new(format!("balance_psi_T_eq_1[{label}]"), psi_end.max(own_end), 1e-10, 1, 0),
        VerifyReport::new(format!("balance_nu_zero[{label}]"), nu_max.max(own_nu), 1e-9, big_t.saturating_sub(1), 0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::{log_linear_200, sd_1000};

    #[test]
    fn balanced_tables_pass() {
        for tab in [log_linear_200().unwrap(), sd_1000().unwrap()] {
            for r in verify_balanced(&tab.balanced().unwrap(), "x") {
                assert!(r.passed, "{}", r.line());
            }
        }
    }

    #[test]
    fn zero_gamma_fails_terminal_condition() {
        let r = verify_balanced(&log_linear_200().unwrap(), "zero");
        assert!(r[0].passed && !r[1].passed && r[2].passed);
    }
}

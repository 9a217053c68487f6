//! `psi_t` via the one-step recursion, against the table's direct sum.

use super::VerifyReport;
use crate::schedule::ScheduleTables;

/// `psi_t = sqrt(a_t) sqrt(1 - ab_{t-1}) / sqrt(1 - ab_t) psi_{t-1} + sqrt(a_t) / sqrt(1 - ab_t) gamma_t`
/// with `psi_0 = 0`, compared with `tables.psi(t)` for every `t`.
pub fn verify_psi_direct_vs_recursive(tables: &ScheduleTables, label: &str) -> VerifyReport {
    let gamma = tables.gammas();
    let mut ab_prev = 1.0f64;
    let mut psi_prev = 0.0f64;
    let mut worst = 0.0f64;
    for (i, b) in tables.betas().iter().enumerate() {
        let t = i + 1;
        let a = 1.0 - b;
        let ab = ab_prev * a;
        let psi = a.sqrt() * (1.0 - ab_prev).sqrt() / (1.0 - ab).sqrt() * psi_prev
            + a.sqrt() / (1.0 - ab).sqrt() * gamma[t];
        worst = worst.max((psi - tables.psi(t)).abs());
        ab_prev = ab;
        psi_prev = psi;
    }
    VerifyReport::new(format!("psi_direct_vs_recursive[{label}]"), worst, 1e-11, tables.horizon(), 0)
}

//! Variance schedules and every per-timestep coefficient derived from them.
//!
//! Tables are indexed by the timestep `t` itself: entry 0 holds the
//! `alpha_0 = 1` sentinels and entries `1..=T` hold the schedule proper.
//! The posterior-only quantities (`nu`, `beta_tilde`) exist for `t >= 2`
//! only and are empty when `T = 1`.

use std::io::Write;

use crate::error::{check_timestep, Error, Result};

/// Forward-process variances `beta_1..beta_T`, each in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSchedule {
    beta: Vec<f64>,
}

impl BetaSchedule {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Param("schedule needs at least one step".into()));
        }
        if let Some((i, b)) = beta
            .iter()
            .enumerate()
            .find(|(_, b)| !(b.is_finite() && **b > 0.0 && **b < 1.0))
        {
            return Err(Error::Param(format!(
                "beta[{}] = {b} is outside (0, 1)",
                i + 1
            )));
        }
        Ok(Self { beta })
    }

    pub fn horizon(&self) -> usize {
        self.beta.len()
    }

    /// Betas for `t = 1..=T` (slice index `t - 1`).
    pub fn betas(&self) -> &[f64] {
        &self.beta
    }
}

/// Log-linear schedule: noise levels log-uniform on `[sigma_min, sigma_max]`,
/// `alpha_bar_t = 1 / (1 + sigma_t^2)`, `beta_t = 1 - alpha_bar_t / alpha_bar_{t-1}`.
pub fn build_log_linear_schedule(
    horizon: usize,
    sigma_min: f64,
    sigma_max: f64,
) -> Result<BetaSchedule> {
    if horizon == 0 {
        return Err(Error::Param("T must be at least 1".into()));
    }
    let valid = sigma_min.is_finite() && sigma_max.is_finite() && sigma_min > 0.0;
    if !valid || sigma_min > sigma_max || (horizon > 1 && sigma_min == sigma_max) {
        return Err(Error::Param(format!(
            "log-linear schedule needs 0 < sigma_min < sigma_max, got [{sigma_min}, {sigma_max}]"
        )));
    }
    let (lo, hi) = (sigma_min.ln(), sigma_max.ln());
    let mut prev_bar = 1.0;
    let mut beta = Vec::with_capacity(horizon);
    for i in 0..horizon {
        let frac = if horizon == 1 {
            0.0
        } else {
            i as f64 / (horizon - 1) as f64
        };
        let sigma = (lo + frac * (hi - lo)).exp();
        let bar = 1.0 / (1.0 + sigma * sigma);
        beta.push(1.0 - bar / prev_bar);
        prev_bar = bar;
    }
    BetaSchedule::new(beta)
}

/// "Scaled linear" schedule: square roots of the betas are evenly spaced.
pub fn build_scaled_linear_schedule(
    horizon: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<BetaSchedule> {
    if horizon == 0 {
        return Err(Error::Param("T must be at least 1".into()));
    }
    let (lo, hi) = (beta_start.sqrt(), beta_end.sqrt());
    let beta = (0..horizon)
        .map(|i| {
            let frac = if horizon == 1 {
                0.0
            } else {
                i as f64 / (horizon - 1) as f64
            };
            let s = lo + frac * (hi - lo);
            s * s
        })
        .collect();
    BetaSchedule::new(beta)
}

/// The Stable Diffusion 1.5 schedule (scaled linear, 0.00085 to 0.012, T = 1000).
pub fn sd15_schedule() -> BetaSchedule {
    build_scaled_linear_schedule(1000, 0.00085, 0.012).expect("constant schedule is valid")
}

/// How the `gamma` column of a table was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaKind {
    /// All zero: the auxiliary noise never enters the forward chain.
    Zero,
    /// Balanced strategy: `phi == psi` everywhere and `psi_T == 1`.
    Balanced,
    /// Caller-supplied coefficients.
    Custom,
}

/// Immutable per-timestep coefficients for a horizon `T`.
#[derive(Debug, Clone)]
pub struct ScheduleTables {
    horizon: usize,
    sigma0: f64,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    gamma: Vec<f64>,
    phi: Vec<f64>,
    psi: Vec<f64>,
    /// `t = 2..=T` at index `t - 2`.
    nu: Vec<f64>,
    lambda_eps: Vec<f64>,
    lambda_v: Vec<f64>,
    /// `t = 2..=T` at index `t - 2`.
    beta_tilde: Vec<f64>,
    sigma_rev_sq: Vec<f64>,
    gamma_kind: GammaKind,
    zero_snr: bool,
}

/// Alpha-derived tables with `gamma` (and hence `phi`, `psi`, `nu`) set to zero.
pub fn derive_alpha_tables(bs: &BetaSchedule, sigma0: f64) -> Result<ScheduleTables> {
    ScheduleTables::from_betas(bs.betas(), sigma0, false)
}

/// Fills `gamma` with the balanced strategy. See [`ScheduleTables::balanced`].
pub fn build_balanced_gamma(tables: &ScheduleTables) -> Result<ScheduleTables> {
    tables.balanced()
}

/// Affine rescale of `sqrt(alpha_bar)` so the terminal SNR is exactly zero.
pub fn zero_snr_rescale(tables: &ScheduleTables) -> Result<ScheduleTables> {
    tables.zero_snr_rescaled()
}

impl ScheduleTables {
    fn from_betas(betas: &[f64], sigma0: f64, zero_snr: bool) -> Result<Self> {
        if !(sigma0.is_finite() && sigma0 > 0.0) {
            return Err(Error::Param(format!("sigma0 must be positive, got {sigma0}")));
        }
        let horizon = betas.len();
        if horizon == 0 {
            return Err(Error::Param("T must be at least 1".into()));
        }
        let mut beta = Vec::with_capacity(horizon + 1);
        beta.push(0.0);
        beta.extend_from_slice(betas);

        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = vec![1.0; horizon + 1];
        for t in 1..=horizon {
            alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
        }
        let sigma_rev_sq = beta.clone();

        let mut lambda_eps = vec![f64::NAN; horizon + 1];
        let mut lambda_v = vec![f64::NAN; horizon + 1];
        for t in 1..=horizon {
            let (a, ab, s2) = (alpha[t], alpha_bar[t], sigma_rev_sq[t]);
            lambda_eps[t] = (1.0 - a).powi(2) / (2.0 * s2 * a * (1.0 - ab));
            lambda_v[t] = alpha_bar[t - 1] * (1.0 - a).powi(2) / (2.0 * s2 * (1.0 - ab));
        }
        let beta_tilde = (2..=horizon)
            .map(|t| {
                (1.0 - alpha[t]) * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * sigma0 * sigma0
            })
            .collect();

        let mut tables = Self {
            horizon,
            sigma0,
            beta,
            alpha,
            alpha_bar,
            gamma: vec![0.0; horizon + 1],
            phi: Vec::new(),
            psi: Vec::new(),
            nu: Vec::new(),
            lambda_eps,
            lambda_v,
            beta_tilde,
            sigma_rev_sq,
            gamma_kind: GammaKind::Zero,
            zero_snr,
        };
        tables.refresh_gamma_terms();
        Ok(tables)
    }

    /// Recomputes `phi`, `psi` and `nu` from the current `gamma`.
    fn refresh_gamma_terms(&mut self) {
        let horizon = self.horizon;
        let (alpha, alpha_bar, gamma) = (&self.alpha, &self.alpha_bar, &self.gamma);

        let mut phi = vec![0.0; horizon + 1];
        let mut psi = vec![0.0; horizon + 1];
        for t in 1..=horizon {
            let (a, ab) = (alpha[t], alpha_bar[t]);
            phi[t] = a.sqrt() * (1.0 - ab).sqrt() / (1.0 - a) * gamma[t];
            psi[t] = direct_psi(alpha_bar, gamma, t);
        }
        let nu = (2..=horizon)
            .map(|t| {
                let (a, ab, ab_prev) = (alpha[t], alpha_bar[t], alpha_bar[t - 1]);
                ((1.0 - a) * (1.0 - ab_prev).sqrt() * psi[t - 1] - a * (1.0 - ab_prev) * gamma[t])
                    / (1.0 - ab)
            })
            .collect();

        self.phi = phi;
        self.psi = psi;
        self.nu = nu;
    }

    /// Tables with caller-supplied `gamma_1..gamma_T`.
    pub fn with_gamma(&self, gamma: &[f64]) -> Result<Self> {
        if gamma.len() != self.horizon {
            return Err(Error::Shape(format!(
                "gamma has {} entries, expected {}",
                gamma.len(),
                self.horizon
            )));
        }
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gamma".into()));
        }
        let mut out = self.clone();
        out.gamma[1..].copy_from_slice(gamma);
        out.gamma_kind = if gamma.iter().all(|g| *g == 0.0) {
            GammaKind::Zero
        } else {
            GammaKind::Custom
        };
        out.refresh_gamma_terms();
        Ok(out)
    }

    /// Balanced strategy: run the `phi_t == psi_t` recursion from an
    /// unnormalised `gamma_1 = 1`, then divide every coefficient by the
    /// resulting `psi_T` so that `psi_T == 1`.
    pub fn balanced(&self) -> Result<Self> {
        let horizon = self.horizon;
        let (alpha, alpha_bar) = (&self.alpha, &self.alpha_bar);
        if !(alpha[1] > 0.0 && alpha_bar[1] < 1.0) {
            return Err(Error::DegenerateSchedule(format!(
                "alpha_1 = {} admits no balanced gamma",
                alpha[1]
            )));
        }

        let mut raw = vec![0.0; horizon + 1];
        raw[1] = 1.0;
        // running sum of raw[i] / sqrt(alpha_bar[i-1]) for i < t
        let mut acc = raw[1] / alpha_bar[0].sqrt();
        for t in 2..=horizon {
            let (a, ab_prev) = (alpha[t], alpha_bar[t - 1]);
            if ab_prev >= 1.0 || a <= 0.0 || ab_prev <= 0.0 {
                return Err(Error::DegenerateSchedule(format!(
                    "alpha_{t} = {a}, alpha_bar_{} = {ab_prev}",
                    t - 1
                )));
            }
            raw[t] = (1.0 - a) * ab_prev.sqrt() / (a * (1.0 - ab_prev)) * acc;
            acc += raw[t] / ab_prev.sqrt();
        }

        let psi_hat_end = direct_psi(alpha_bar, &raw, horizon);
        if !(psi_hat_end.is_finite() && psi_hat_end > 0.0) {
            return Err(Error::DegenerateSchedule(format!(
                "unnormalised psi_T = {psi_hat_end}"
            )));
        }

        let mut out = self.clone();
        for t in 1..=horizon {
            out.gamma[t] = raw[t] / psi_hat_end;
        }
        out.gamma_kind = GammaKind::Balanced;
        out.refresh_gamma_terms();
        Ok(out)
    }

    /// Zero terminal SNR: `s'_t = (s_t - s_T) s_1 / (s_1 - s_T)` with
    /// `s_t = sqrt(alpha_bar_t)`, betas re-derived from `s'^2`. The result is a
    /// plain (gamma = 0) table flagged as usable with v-prediction only.
    pub fn zero_snr_rescaled(&self) -> Result<Self> {
        let horizon = self.horizon;
        let s: Vec<f64> = self.alpha_bar.iter().map(|ab| ab.sqrt()).collect();
        let (s1, s_end) = (s[1], s[horizon]);
        if !(s_end >= 0.0 && s1 > s_end) {
            return Err(Error::DegenerateSchedule(format!(
                "zero-SNR rescale needs alpha_bar_1 > alpha_bar_T >= 0 (got {} and {})",
                self.alpha_bar[1], self.alpha_bar[horizon]
            )));
        }
        let mut prev = 1.0;
        let mut betas = Vec::with_capacity(horizon);
        for &st in &s[1..] {
            let scaled = (st - s_end) * s1 / (s1 - s_end);
            let bar = scaled * scaled;
            betas.push(1.0 - bar / prev);
            prev = bar;
        }
        Self::from_betas(&betas, self.sigma0, true)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn gamma_kind(&self) -> GammaKind {
        self.gamma_kind
    }

    /// True for tables produced by [`zero_snr_rescale`]; these only support v-prediction.
    pub fn is_zero_snr(&self) -> bool {
        self.zero_snr
    }

    /// True when the posterior mean does not depend on the auxiliary noise
    /// (`nu_t == 0`), i.e. for zero or balanced gamma.
    pub fn is_xi_free_posterior(&self) -> bool {
        matches!(self.gamma_kind, GammaKind::Zero | GammaKind::Balanced)
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        check_timestep(t, 1, self.horizon)
    }

    // Scalar accessors take t in 0..=T (0 is the alpha_0 sentinel).

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }
    pub fn gamma(&self, t: usize) -> f64 {
        self.gamma[t]
    }
    pub fn phi(&self, t: usize) -> f64 {
        self.phi[t]
    }
    pub fn psi(&self, t: usize) -> f64 {
        self.psi[t]
    }
    pub fn lambda_eps(&self, t: usize) -> f64 {
        self.lambda_eps[t]
    }
    pub fn lambda_v(&self, t: usize) -> f64 {
        self.lambda_v[t]
    }
    pub fn sigma_rev_sq(&self, t: usize) -> f64 {
        self.sigma_rev_sq[t]
    }

    pub fn nu(&self, t: usize) -> Result<f64> {
        check_timestep(t, 2, self.horizon)?;
        Ok(self.nu[t - 2])
    }

    pub fn beta_tilde(&self, t: usize) -> Result<f64> {
        check_timestep(t, 2, self.horizon)?;
        Ok(self.beta_tilde[t - 2])
    }

    /// `alpha_bar_0..=alpha_bar_T`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
    /// `alpha_0..=alpha_T`.
    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }
    /// `gamma_0..=gamma_T` (`gamma_0 = 0`).
    pub fn gammas(&self) -> &[f64] {
        &self.gamma
    }
    /// `nu_2..=nu_T`.
    pub fn nus(&self) -> &[f64] {
        &self.nu
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta[1..]
    }

    /// Largest `|phi_t - psi_t|`, `|psi_T - 1|` and largest `|nu_t|`.
    pub fn balance_residuals(&self) -> (f64, f64, f64) {
        let phi_psi = (1..=self.horizon)
            .map(|t| (self.phi[t] - self.psi[t]).abs())
            .fold(0.0, f64::max);
        let psi_end = (self.psi[self.horizon] - 1.0).abs();
        let nu = self.nu.iter().map(|v| v.abs()).fold(0.0, f64::max);
        (phi_psi, psi_end, nu)
    }

    /// Dumps every table as CSV, one row per timestep.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t",
            "beta",
            "alpha",
            "alpha_bar",
            "gamma",
            "phi",
            "psi",
            "nu",
            "lambda_eps",
            "lambda_v",
            "beta_tilde",
        ])?;
        for t in 1..=self.horizon {
            let opt = |v: Result<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                t.to_string(),
                self.beta[t].to_string(),
                self.alpha[t].to_string(),
                self.alpha_bar[t].to_string(),
                self.gamma[t].to_string(),
                self.phi[t].to_string(),
                self.psi[t].to_string(),
                opt(self.nu(t)),
                self.lambda_eps[t].to_string(),
                self.lambda_v[t].to_string(),
                opt(self.beta_tilde(t)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `psi_t = (1 / sqrt(1 - alpha_bar_t)) * sum_{i<=t} sqrt(alpha_bar_t / alpha_bar_{i-1}) gamma_i`.
fn direct_psi(alpha_bar: &[f64], gamma: &[f64], t: usize) -> f64 {
    let ab = alpha_bar[t];
    let sum: f64 = (1..=t)
        .map(|i| (ab / alpha_bar[i - 1]).sqrt() * gamma[i])
        .sum();
    sum / (1.0 - ab).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_linear_200() -> ScheduleTables {
        let bs = build_log_linear_schedule(200, 0.01, 10.0).unwrap();
        derive_alpha_tables(&bs, 1.0).unwrap()
    }

    #[test]
    fn single_point_log_linear() {
        let bs = build_log_linear_schedule(1, 1.0, 1.0).unwrap();
        assert_eq!(bs.betas(), &[0.5]);
    }

    #[test]
    fn log_linear_three_steps_matches_formula() {
        // sigma = 0.1, 1, 10 -> alpha_bar = 1/1.01, 1/2, 1/101
        let bs = build_log_linear_schedule(3, 0.1, 10.0).unwrap();
        let bars = [1.0 / 1.01, 0.5, 1.0 / 101.0];
        let expected = [1.0 - bars[0], 1.0 - bars[1] / bars[0], 1.0 - bars[2] / bars[1]];
        for (b, e) in bs.betas().iter().zip(expected) {
            assert!((b - e).abs() < 1e-14, "{b} vs {e}");
        }
    }

    #[test]
    fn log_linear_rejects_bad_ranges() {
        assert!(build_log_linear_schedule(0, 0.1, 1.0).is_err());
        assert!(build_log_linear_schedule(10, 1.0, 0.1).is_err());
        assert!(build_log_linear_schedule(10, 0.0, 1.0).is_err());
        assert!(build_log_linear_schedule(10, 1.0, 1.0).is_err());
    }

    #[test]
    fn beta_schedule_validation() {
        assert!(BetaSchedule::new(vec![]).is_err());
        assert!(BetaSchedule::new(vec![0.1, 1.0]).is_err());
        assert!(BetaSchedule::new(vec![0.0]).is_err());
        assert!(BetaSchedule::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn single_step_tables() {
        let bs = BetaSchedule::new(vec![0.5]).unwrap();
        let tab = derive_alpha_tables(&bs, 1.0).unwrap();
        assert_eq!(tab.alpha(1), 0.5);
        assert_eq!(tab.alpha_bar(1), 0.5);
        assert!((tab.lambda_eps(1) - 1.0).abs() < 1e-15);
        assert_eq!(tab.sigma_rev_sq(1), 0.5);
        assert!(tab.nus().is_empty());
        assert!(tab.nu(1).is_err());
        assert!(tab.beta_tilde(2).is_err());
    }

    #[test]
    fn tiny_beta_keeps_alpha_bar_near_one() {
        let bs = BetaSchedule::new(vec![1e-12]).unwrap();
        let tab = derive_alpha_tables(&bs, 1.0).unwrap();
        assert!((tab.alpha_bar(1) - 1.0).abs() < 1e-11);
    }

    #[test]
    fn sd15_alpha_bar_small_but_positive() {
        let tab = derive_alpha_tables(&sd15_schedule(), 1.0).unwrap();
        let end = tab.alpha_bar(1000);
        assert!(end > 0.0 && end < 0.01, "{end}");
        assert!(tab.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn balanced_single_step() {
        let bs = BetaSchedule::new(vec![0.3]).unwrap();
        let tab = derive_alpha_tables(&bs, 1.0).unwrap().balanced().unwrap();
        let a: f64 = 0.7;
        assert!((tab.gamma(1) - (1.0 - a).sqrt() / a.sqrt()).abs() < 1e-15);
        assert!((tab.psi(1) - 1.0).abs() < 1e-15);
        assert!((tab.phi(1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn balanced_invariants_log_linear() {
        let tab = log_linear_200().balanced().unwrap();
        let (pp, pe, nu) = tab.balance_residuals();
        assert!(pp <= 1e-10 && pe <= 1e-10 && nu <= 1e-9, "{pp} {pe} {nu}");
        assert_eq!(tab.gamma_kind(), GammaKind::Balanced);
    }

    #[test]
    fn balanced_sd15_shape() {
        let tab = derive_alpha_tables(&sd15_schedule(), 1.0)
            .unwrap()
            .balanced()
            .unwrap();
        let (pp, pe, nu) = tab.balance_residuals();
        assert!(pp <= 1e-10 && pe <= 1e-10 && nu <= 1e-9, "{pp} {pe} {nu}");
        // gamma and beta live on comparable scales, gamma rises faster at the end
        let g_end = tab.gamma(1000);
        let b_end = tab.beta(1000);
        assert!(g_end > 0.1 * b_end && g_end < 10.0 * b_end, "{g_end} {b_end}");
        assert!(tab.gamma(1000) / tab.gamma(500) > tab.beta(1000) / tab.beta(500));
        // psi increases towards one
        assert!(tab.psi(10) < tab.psi(500) && tab.psi(500) < tab.psi(1000));
    }

    #[test]
    fn balanced_rejects_zero_snr_tables() {
        let z = log_linear_200().zero_snr_rescaled().unwrap();
        assert!(matches!(z.balanced(), Err(Error::DegenerateSchedule(_))));
    }

    #[test]
    fn zero_gamma_gives_zero_terms() {
        let tab = log_linear_200();
        assert_eq!(tab.gamma_kind(), GammaKind::Zero);
        assert!(tab.nus().iter().all(|v| *v == 0.0));
        assert!((1..=200).all(|t| tab.phi(t) == 0.0 && tab.psi(t) == 0.0));
    }

    #[test]
    fn zero_snr_endpoints() {
        let tab = log_linear_200();
        let z = tab.zero_snr_rescaled().unwrap();
        assert!(z.is_zero_snr());
        assert_eq!(z.alpha_bar(200), 0.0);
        assert!((z.alpha_bar(1) - tab.alpha_bar(1)).abs() < 1e-15);
        assert!(z.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        let snr_end = z.alpha_bar(200) / (1.0 - z.alpha_bar(200));
        assert_eq!(snr_end, 0.0);
    }

    #[test]
    fn zero_snr_is_idempotent() {
        let z = derive_alpha_tables(&sd15_schedule(), 1.0)
            .unwrap()
            .zero_snr_rescaled()
            .unwrap();
        let zz = z.zero_snr_rescaled().unwrap();
        for t in 0..=1000 {
            assert!((z.alpha_bar(t) - zz.alpha_bar(t)).abs() <= 1e-12);
        }
    }

    #[test]
    fn lambdas_positive() {
        let tab = log_linear_200();
        for t in 1..=200 {
            assert!(tab.lambda_eps(t) > 0.0 && tab.lambda_v(t) > 0.0);
        }
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let tab = log_linear_200().balanced().unwrap();
        let mut buf = Vec::new();
        tab.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,beta,alpha,alpha_bar,gamma,phi,psi,nu,lambda_eps,lambda_v,beta_tilde"
        );
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "1");
        assert_eq!(first[7], "");
        assert_eq!(text.lines().count(), 201);
    }
}

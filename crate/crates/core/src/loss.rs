//! Training pairs and losses for the four model variants under either
//! prediction mode.
//!
//! Randomness is always consumed in the same order: `n` normals for
//! `eps0`, then the auxiliary draw (`xi` or the offset `eps_c`), which for
//! a point-mass spec consumes nothing. This makes the proposed model with a
//! point-mass `xi` bitwise identical to plain DDPM under a shared stream.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::fill_normal;
use crate::schedule::{GammaKind, ScheduleTables};
use crate::xi_noise::{AuxNoise, XiSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Base,
    Offset,
    ZeroSnr,
    Proposed,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Base,
        Variant::Offset,
        Variant::ZeroSnr,
        Variant::Proposed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Offset => "offset",
            Variant::ZeroSnr => "zero_snr",
            Variant::Proposed => "proposed",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Eps,
    V,
}

impl Prediction {
    pub fn name(self) -> &'static str {
        match self {
            Prediction::Eps => "eps",
            Prediction::V => "v",
        }
    }
}

impl std::fmt::Display for Prediction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Prediction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eps" => Ok(Prediction::Eps),
            "v" => Ok(Prediction::V),
            _ => Err(Error::Config(format!("unknown prediction '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Weight 1 for every timestep.
    #[default]
    Simple,
    /// The ELBO weights `lambda_t` (eps) or `lambda_t^v` (v).
    Elbo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub x_t: Vec<f64>,
    pub target: Vec<f64>,
    pub t: usize,
    pub weight: f64,
}

/// Which loss a model is trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossSpec {
    pub variant: Variant,
    pub prediction: Prediction,
    pub weighting: Weighting,
}

impl LossSpec {
    pub fn new(variant: Variant, prediction: Prediction) -> Self {
        Self {
            variant,
            prediction,
            weighting: Weighting::Simple,
        }
    }

    /// Checks the combination against the tables and noise spec it will be used with.
    pub fn validate(&self, tables: &ScheduleTables, spec: &XiSpec) -> Result<()> {
        spec.validate()?;
        if self.variant == Variant::ZeroSnr {
            if self.prediction == Prediction::Eps {
                return Err(Error::Unsupported(
                    "zero_snr requires v-prediction".into(),
                ));
            }
            if !tables.is_zero_snr() {
                return Err(Error::Config("zero_snr variant needs rescaled tables".into()));
            }
        } else if tables.is_zero_snr() {
            return Err(Error::Config(format!(
                "{} variant given zero-SNR tables",
                self.variant
            )));
        }
        if self.prediction == Prediction::V && tables.gamma_kind() == GammaKind::Custom {
            return Err(Error::Unsupported(
                "v-prediction needs zero or balanced gamma".into(),
            ));
        }
        if matches!(self.variant, Variant::Base | Variant::ZeroSnr)
            && tables.gamma_kind() != GammaKind::Zero
        {
            return Err(Error::Config(format!(
                "{} variant expects gamma = 0",
                self.variant
            )));
        }
        Ok(())
    }

    fn weight(&self, tables: &ScheduleTables, t: usize) -> f64 {
        match (self.weighting, self.prediction) {
            (Weighting::Simple, _) => 1.0,
            (Weighting::Elbo, Prediction::Eps) => tables.lambda_eps(t),
            (Weighting::Elbo, Prediction::V) => tables.lambda_v(t),
        }
    }
}

/// Noise actually injected into `x_t` and the eps-style regression target.
struct Noise {
    added: Vec<f64>,
    eps_target: Vec<f64>,
}

fn draw_noise<R: Rng + ?Sized>(
    variant: Variant,
    n: usize,
    t: usize,
    tables: &ScheduleTables,
    spec: &XiSpec,
    rng: &mut R,
) -> Noise {
    let mut eps0 = vec![0.0; n];
    fill_normal(rng, &mut eps0);
    match variant {
        Variant::Base | Variant::ZeroSnr => {
            let s0 = tables.sigma0();
            let added: Vec<f64> = eps0.iter().map(|e| s0 * e).collect();
            Noise {
                eps_target: added.clone(),
                added,
            }
        }
        Variant::Offset => {
            let mut c = vec![0.0; n];
            spec.sample_into(rng, &mut c);
            let added: Vec<f64> = eps0.iter().zip(&c).map(|(e, c)| e + c).collect();
            Noise {
                eps_target: added.clone(),
                added,
            }
        }
        Variant::Proposed => {
            let mut xi = vec![0.0; n];
            spec.sample_into(rng, &mut xi);
            let (s0, phi, psi) = (tables.sigma0(), tables.phi(t), tables.psi(t));
            Noise {
                added: eps0.iter().zip(&xi).map(|(e, k)| s0 * e + psi * k).collect(),
                eps_target: eps0.iter().zip(&xi).map(|(e, k)| s0 * e + phi * k).collect(),
            }
        }
    }
}

/// Builds one training pair for `x0` at timestep `t`.
pub fn make_pair<R: Rng + ?Sized>(
    loss: &LossSpec,
    x0: &[f64],
    t: usize,
    tables: &ScheduleTables,
    spec: &XiSpec,
    rng: &mut R,
) -> Result<TrainingPair> {
    tables.check_t(t)?;
    if spec.dim != x0.len() {
        return Err(Error::Shape(format!(
            "xi dim {} vs data dim {}",
            spec.dim,
            x0.len()
        )));
    }
    let noise = draw_noise(loss.variant, x0.len(), t, tables, spec, rng);
    let ab = tables.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let x_t: Vec<f64> = x0
        .iter()
        .zip(&noise.added)
        .map(|(x, a)| sa * x + sn * a)
        .collect();
    let target = match loss.prediction {
        Prediction::Eps => noise.eps_target,
        Prediction::V => noise
            .added
            .iter()
            .zip(x0)
            .map(|(a, x)| sa * a - sn * x)
            .collect(),
    };
    Ok(TrainingPair {
        x_t,
        target,
        t,
        weight: loss.weight(tables, t),
    })
}

/// Proposed eps pair: `x_t` from the closed-form marginal, target `sigma0 eps0 + phi_t xi`.
pub fn make_eps_pair_proposed<R: Rng + ?Sized>(
    x0: &[f64],
    t: usize,
    tables: &ScheduleTables,
    spec: &XiSpec,
    weighting: Weighting,
    rng: &mut R,
) -> Result<TrainingPair> {
    let loss = LossSpec {
        variant: Variant::Proposed,
        prediction: Prediction::Eps,
        weighting,
    };
    make_pair(&loss, x0, t, tables, spec, rng)
}

/// Offset-noise pair: `eps0 + eps_c` is both the injected noise and the target.
pub fn make_eps_pair_offset<R: Rng + ?Sized>(
    x0: &[f64],
    t: usize,
    tables: &ScheduleTables,
    spec: &XiSpec,
    weighting: Weighting,
    rng: &mut R,
) -> Result<TrainingPair> {
    let loss = LossSpec {
        variant: Variant::Offset,
        prediction: Prediction::Eps,
        weighting,
    };
    make_pair(&loss, x0, t, tables, spec, rng)
}

/// Proposed v pair: target `sqrt(ab)(sigma0 eps0 + psi xi) - sqrt(1 - ab) x0`.
/// Tables with a custom (unbalanced) gamma are rejected.
pub fn make_v_pair<R: Rng + ?Sized>(
    x0: &[f64],
    t: usize,
    tables: &ScheduleTables,
    spec: &XiSpec,
    weighting: Weighting,
    rng: &mut R,
) -> Result<TrainingPair> {
    if !tables.is_xi_free_posterior() {
        return Err(Error::Unsupported(
            "v-prediction needs zero or balanced gamma".into(),
        ));
    }
    let loss = LossSpec {
        variant: Variant::Proposed,
        prediction: Prediction::V,
        weighting,
    };
    make_pair(&loss, x0, t, tables, spec, rng)
}

/// Mean over pairs of `weight * ||target - prediction||^2`.
pub fn batch_loss(pairs: &[TrainingPair], predictions: &[Vec<f64>]) -> Result<f64> {
    if pairs.len() != predictions.len() {
        return Err(Error::Shape(format!(
            "{} pairs but {} predictions",
            pairs.len(),
            predictions.len()
        )));
    }
    if pairs.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let mut total = 0.0;
    for (p, y) in pairs.iter().zip(predictions) {
        if p.target.len() != y.len() {
            return Err(Error::Shape("prediction width differs from target".into()));
        }
        let sq: f64 = p.target.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        total += p.weight * sq;
    }
    Ok(total / pairs.len() as f64)
}

/// `v = sqrt(ab) eps - sqrt(1 - ab) x0` rewritten in terms of `x_t` and the noise.
pub fn v_from_eps(x_t: &[f64], eps: &[f64], t: usize, tables: &ScheduleTables) -> Vec<f64> {
    let ab = tables.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    x_t.iter()
        .zip(eps)
        .map(|(x, e)| {
            let x0 = (x - sn * e) / sa;
            sa * e - sn * x0
        })
        .collect()
}

/// Inverse of [`v_from_eps`]: `eps = sqrt(1 - ab) x_t + sqrt(ab) v`.
pub fn eps_from_v(x_t: &[f64], v: &[f64], t: usize, tables: &ScheduleTables) -> Vec<f64> {
    let ab = tables.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    x_t.iter().zip(v).map(|(x, v)| sn * x + sa * v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, substream};
    use crate::schedule::{build_log_linear_schedule, derive_alpha_tables, BetaSchedule};
    use proptest::prelude::*;

    fn plain() -> ScheduleTables {
        let bs = build_log_linear_schedule(200, 0.01, 10.0).unwrap();
        derive_alpha_tables(&bs, 1.0).unwrap()
    }

    #[test]
    fn proposed_delta_zero_is_ddpm() {
        let tab = plain().balanced().unwrap();
        let spec = XiSpec::delta_zero(3);
        let x0 = [0.5, -1.0, 2.0];
        let mut a = substream(1, 5);
        let mut b = substream(1, 5);
        let p = make_eps_pair_proposed(&x0, 42, &tab, &spec, Weighting::Simple, &mut a).unwrap();
        let eps: Vec<f64> = (0..3).map(|_| normal(&mut b)).collect();
        let ab = tab.alpha_bar(42);
        for i in 0..3 {
            assert_eq!(p.target[i], eps[i]);
            assert_eq!(p.x_t[i], ab.sqrt() * x0[i] + (1.0 - ab).sqrt() * eps[i]);
        }
        assert_eq!(p.weight, 1.0);
    }

    #[test]
    fn balanced_added_noise_equals_target() {
        let tab = plain().balanced().unwrap();
        let spec = XiSpec::correlated(1.0, 4);
        let mut rng = substream(2, 5);
        let x0 = [1.0, 0.0, -1.0, 0.5];
        for t in 1..=200 {
            let p = make_eps_pair_proposed(&x0, t, &tab, &spec, Weighting::Simple, &mut rng)
                .unwrap();
            let ab = tab.alpha_bar(t);
            for i in 0..4 {
                let added = (p.x_t[i] - ab.sqrt() * x0[i]) / (1.0 - ab).sqrt();
                assert!((added - p.target[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn scalar_formula_oracle() {
        let bs = BetaSchedule::new(vec![0.1, 0.2]).unwrap();
        let tab = derive_alpha_tables(&bs, 1.0).unwrap().with_gamma(&[0.3, 0.4]).unwrap();
        let spec = XiSpec::correlated(1.0, 1);
        let mut rng = substream(3, 3);
        let mut copy = substream(3, 3);
        let p = make_eps_pair_proposed(&[2.0], 2, &tab, &spec, Weighting::Simple, &mut rng)
            .unwrap();
        let e0 = normal(&mut copy);
        let xi = normal(&mut copy);
        // hand tables: alpha = (0.9, 0.8), alpha_bar = (0.9, 0.72)
        let ab: f64 = 0.72;
        let phi = 0.8f64.sqrt() * (1.0 - ab).sqrt() / 0.2 * 0.4;
        let psi = ((ab / 1.0).sqrt() * 0.3 + (ab / 0.9).sqrt() * 0.4) / (1.0 - ab).sqrt();
        let x_t = ab.sqrt() * 2.0 + (1.0 - ab).sqrt() * (e0 + psi * xi);
        assert!((p.x_t[0] - x_t).abs() < 1e-12);
        assert!((p.target[0] - (e0 + phi * xi)).abs() < 1e-12);
    }

    #[test]
    fn offset_zero_sigma_is_ddpm() {
        let tab = plain();
        let x0 = [0.3, 0.4];
        let mut a = substream(4, 5);
        let mut b = substream(4, 5);
        let off =
            make_eps_pair_offset(&x0, 10, &tab, &XiSpec::correlated(0.0, 2), Weighting::Simple, &mut a)
                .unwrap();
        let base = make_pair(
            &LossSpec::new(Variant::Base, Prediction::Eps),
            &x0,
            10,
            &tab,
            &XiSpec::delta_zero(2),
            &mut b,
        )
        .unwrap();
        assert_eq!(off.x_t, base.x_t);
        assert_eq!(off.target, base.target);
    }

    #[test]
    fn offset_equals_proposed_with_unit_coefficients() {
        // Forcing phi = psi = 1 in the proposed pair yields the offset pair.
        let tab = plain();
        let spec = XiSpec::correlated(0.5, 3);
        let x0 = [1.0, 2.0, 3.0];
        let t = 77;
        let mut a = substream(8, 5);
        let mut b = substream(8, 5);
        let off = make_eps_pair_offset(&x0, t, &tab, &spec, Weighting::Simple, &mut a).unwrap();
        let mut eps0 = vec![0.0; 3];
        fill_normal(&mut b, &mut eps0);
        let xi = spec.sample(&mut b);
        let ab = tab.alpha_bar(t);
        for i in 0..3 {
            let noise = eps0[i] + 1.0 * xi[i];
            assert_eq!(off.target[i], noise);
            assert_eq!(off.x_t[i], ab.sqrt() * x0[i] + (1.0 - ab).sqrt() * noise);
        }
    }

    #[test]
    fn v_pair_reconstructs_x0() {
        let tab = plain().balanced().unwrap();
        let spec = XiSpec::correlated(1.0, 2);
        let mut rng = substream(5, 5);
        let x0 = [1.5, -0.5];
        for t in [1, 2, 50, 199, 200] {
            let p = make_v_pair(&x0, t, &tab, &spec, Weighting::Elbo, &mut rng).unwrap();
            let ab = tab.alpha_bar(t);
            for i in 0..2 {
                let rec = ab.sqrt() * p.x_t[i] - (1.0 - ab).sqrt() * p.target[i];
                assert!((rec - x0[i]).abs() < 1e-9);
            }
            assert_eq!(p.weight, tab.lambda_v(t));
        }
    }

    #[test]
    fn v_pair_rejects_custom_gamma() {
        let gamma = vec![0.01; 200];
        let tab = plain().with_gamma(&gamma).unwrap();
        let mut rng = substream(0, 0);
        let r = make_v_pair(&[0.0], 3, &tab, &XiSpec::delta_zero(1), Weighting::Simple, &mut rng);
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn lambda_v_is_alpha_bar_times_lambda_eps() {
        let tab = plain();
        let mut rng = substream(6, 6);
        for _ in 0..10 {
            let t = rand::Rng::random_range(&mut rng, 1..=200);
            let (a, ab, ab_prev, s2) = (
                tab.alpha(t),
                tab.alpha_bar(t),
                tab.alpha_bar(t - 1),
                tab.sigma_rev_sq(t),
            );
            let direct = ab_prev * (1.0 - a).powi(2) / (2.0 * s2 * (1.0 - ab));
            assert!((tab.lambda_v(t) - direct).abs() <= 1e-12 * direct);
            assert!((tab.lambda_v(t) - ab * tab.lambda_eps(t)).abs() <= 1e-12 * direct);
        }
    }

    #[test]
    fn batch_loss_examples() {
        let pair = TrainingPair {
            x_t: vec![0.0, 0.0],
            target: vec![3.0, 4.0],
            t: 1,
            weight: 1.0,
        };
        assert_eq!(batch_loss(&[pair.clone()], &[vec![0.0, 0.0]]).unwrap(), 25.0);
        assert_eq!(batch_loss(&[pair.clone()], &[vec![3.0, 4.0]]).unwrap(), 0.0);
        assert!(batch_loss(&[pair], &[]).is_err());
    }

    #[test]
    fn combination_validation() {
        let tab = plain();
        let z = tab.zero_snr_rescaled().unwrap();
        let xi = XiSpec::delta_zero(2);
        assert!(matches!(
            LossSpec::new(Variant::ZeroSnr, Prediction::Eps).validate(&z, &xi),
            Err(Error::Unsupported(_))
        ));
        assert!(LossSpec::new(Variant::ZeroSnr, Prediction::V).validate(&z, &xi).is_ok());
        assert!(LossSpec::new(Variant::Base, Prediction::Eps).validate(&z, &xi).is_err());
        assert!(LossSpec::new(Variant::Base, Prediction::V).validate(&tab, &xi).is_ok());
    }

    #[test]
    fn names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("v".parse::<Prediction>().unwrap(), Prediction::V);
        assert!("x0".parse::<Prediction>().is_err());
    }

    proptest! {
        #[test]
        fn batch_loss_matches_naive_sum_and_ignores_order(
            rows in prop::collection::vec(
                (prop::collection::vec(-5.0f64..5.0, 3), prop::collection::vec(-5.0f64..5.0, 3), 0.1f64..3.0),
                1..20
            ),
            shift in 0usize..20,
        ) {
            let pairs: Vec<TrainingPair> = rows.iter().map(|(tg, _, w)| TrainingPair {
                x_t: vec![0.0; 3], target: tg.clone(), t: 1, weight: *w,
            }).collect();
            let preds: Vec<Vec<f64>> = rows.iter().map(|(_, p, _)| p.clone()).collect();
            let got = batch_loss(&pairs, &preds).unwrap();

            let mut naive = 0.0;
            for (tg, p, w) in &rows {
                let mut s = 0.0;
                for j in 0..3 { s += (tg[j] - p[j]).powi(2); }
                naive += w * s;
            }
            naive /= rows.len() as f64;
            prop_assert!((got - naive).abs() <= 1e-12 * naive.max(1.0));

            let k = shift % pairs.len();
            let mut rp = pairs.clone(); rp.rotate_left(k);
            let mut rq = preds.clone(); rq.rotate_left(k);
            let rotated = batch_loss(&rp, &rq).unwrap();
            prop_assert!((rotated - got).abs() <= 1e-12 * got.max(1.0));

            let doubled: Vec<Vec<f64>> = rows.iter()
                .map(|(tg, p, _)| (0..3).map(|j| tg[j] - 2.0 * (tg[j] - p[j])).collect())
                .collect();
            let four = batch_loss(&pairs, &doubled).unwrap();
            prop_assert!((four - 4.0 * got).abs() <= 1e-9 * got.max(1.0));
        }

        #[test]
        fn v_and_eps_convert_exactly(seed in 0u64..1000, t in 1usize..=200) {
            let tab = plain();
            let mut rng = substream(seed, 5);
            let x0 = [normal(&mut rng), normal(&mut rng)];
            let mut r1 = substream(seed, 9);
            let mut r2 = substream(seed, 9);
            let xi = XiSpec::delta_zero(2);
            let pe = make_pair(&LossSpec::new(Variant::Base, Prediction::Eps), &x0, t, &tab, &xi, &mut r1).unwrap();
            let pv = make_pair(&LossSpec::new(Variant::Base, Prediction::V), &x0, t, &tab, &xi, &mut r2).unwrap();
            prop_assert_eq!(&pe.x_t, &pv.x_t);
            let v = v_from_eps(&pe.x_t, &pe.target, t, &tab);
            let e = eps_from_v(&pv.x_t, &pv.target, t, &tab);
            for i in 0..2 {
                prop_assert!((v[i] - pv.target[i]).abs() < 1e-9);
                prop_assert!((e[i] - pe.target[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn reduction_chain_is_bitwise(seed in 0u64..10_000, t in 1usize..=200) {
            let tab = plain();
            let bal = tab.balanced().unwrap();
            let x0 = [0.25, -1.75];
            let mut a = substream(seed, 5);
            let mut b = substream(seed, 5);
            let mut c = substream(seed, 5);
            let prop = make_eps_pair_proposed(&x0, t, &bal, &XiSpec::delta_zero(2), Weighting::Simple, &mut a).unwrap();
            let base = make_pair(&LossSpec::new(Variant::Base, Prediction::Eps), &x0, t, &tab, &XiSpec::delta_zero(2), &mut b).unwrap();
            let off = make_eps_pair_offset(&x0, t, &tab, &XiSpec::correlated(0.0, 2), Weighting::Simple, &mut c).unwrap();
            prop_assert_eq!(&prop, &base);
            prop_assert_eq!(&off, &base);
        }
    }
}

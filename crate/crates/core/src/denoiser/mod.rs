//! Time-conditioned MLP denoiser with exact backpropagation.
//!
//! Layout: the input is `[x || emb(t)]`, every hidden layer is affine
//! followed by exact GELU, and the output layer is affine. All parameters
//! live in one flat buffer, layer by layer, weight `(out, in)` row-major then
//! bias, which is also the checkpoint order.

mod adam;
mod checkpoint;
mod scalar;

pub use adam::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader, CHECKPOINT_FORMAT};
pub use scalar::Scalar;

use rand::Rng;

use crate::error::{Error, Result};
use crate::loss::TrainingPair;
use crate::rng::{stream, substream};

/// Hidden widths of the reference architecture.
pub const DEFAULT_HIDDEN: [usize; 5] = [256, 512, 1024, 512, 256];
pub const DEFAULT_EMBED_DIM: usize = 16;

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
// 1 / sqrt(2 pi)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MlpSpec {
    pub data_dim: usize,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    /// Number of diffusion steps `T`; the embedding sees `t / T`.
    pub horizon: usize,
}

impl MlpSpec {
    pub fn new(data_dim: usize, embed_dim: usize, hidden: Vec<usize>, horizon: usize) -> Self {
        Self {
            data_dim,
            embed_dim,
            hidden,
            horizon,
        }
    }

    pub fn standard(data_dim: usize, horizon: usize) -> Self {
        Self::new(data_dim, DEFAULT_EMBED_DIM, DEFAULT_HIDDEN.to_vec(), horizon)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 {
            return Err(Error::Param("data dimension must be positive".into()));
        }
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(2) {
            return Err(Error::Param(format!(
                "embedding width must be positive and even, got {}",
                self.embed_dim
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Param("hidden widths must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Param("horizon must be positive".into()));
        }
        Ok(())
    }

    /// `[n + embed, hidden..., n]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.data_dim + self.embed_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(self.data_dim);
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Sinusoidal features of `tau = t / T`: interleaved `(sin, cos)` pairs at
/// frequencies log-spaced on `[1, 1000]`.
pub fn time_embedding(t: usize, horizon: usize, embed_dim: usize) -> Result<Vec<f64>> {
    if embed_dim == 0 || !embed_dim.is_multiple_of(2) {
        return Err(Error::Param(format!(
            "embedding width must be positive and even, got {embed_dim}"
        )));
    }
    if horizon == 0 || t > horizon {
        return Err(Error::Timestep {
            t,
            lo: 0,
            hi: horizon,
        });
    }
    Ok(embed_tau(t as f64 / horizon as f64, embed_dim))
}

fn embed_tau(tau: f64, embed_dim: usize) -> Vec<f64> {
    let half = embed_dim / 2;
    let ln_max = 1000f64.ln();
    let mut out = Vec::with_capacity(embed_dim);
    for k in 0..half {
        let frac = if half == 1 {
            0.0
        } else {
            k as f64 / (half - 1) as f64
        };
        let w = (frac * ln_max).exp();
        out.push((tau * w).sin());
        out.push((tau * w).cos());
    }
    out
}

/// A flat batch ready for the network: `b` rows of width `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<S> {
    pub x: Vec<S>,
    pub target: Vec<S>,
    pub t: Vec<usize>,
    pub weight: Vec<S>,
}

impl<S: Scalar> Batch<S> {
    pub fn from_pairs(pairs: &[TrainingPair]) -> Self {
        let mut b = Batch {
            x: Vec::new(),
            target: Vec::new(),
            t: Vec::with_capacity(pairs.len()),
            weight: Vec::with_capacity(pairs.len()),
        };
        for p in pairs {
            b.x.extend(p.x_t.iter().map(|v| S::from_f64(*v)));
            b.target.extend(p.target.iter().map(|v| S::from_f64(*v)));
            b.t.push(p.t);
            b.weight.push(S::from_f64(p.weight));
        }
        b
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<S> {
    spec: MlpSpec,
    dims: Vec<usize>,
    /// Offset of each layer's weight block in `params`.
    offsets: Vec<usize>,
    params: Vec<S>,
}

/// Per-layer intermediates kept for the backward pass.
struct Trace<S> {
    /// Input to layer `l` (`acts[0]` is the network input).
    acts: Vec<Vec<S>>,
    /// Pre-activations of hidden layer `l`.
    pre: Vec<Vec<S>>,
    /// `Phi(pre)` for hidden layer `l`.
    cdf: Vec<Vec<S>>,
    out: Vec<S>,
}

fn layer_offsets(dims: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(dims.len() - 1);
    let mut acc = 0;
    for w in dims.windows(2) {
        offsets.push(acc);
        acc += w[0] * w[1] + w[1];
    }
    offsets
}

impl<S: Scalar> Mlp<S> {
    /// All-zero parameters.
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        let offsets = layer_offsets(&dims);
        let params = vec![S::ZERO; spec.num_params()];
        Ok(Self {
            spec,
            dims,
            offsets,
            params,
        })
    }

    /// Fan-in uniform weights `U(-1/sqrt(in), 1/sqrt(in))`, zero biases.
    pub fn init_params(spec: MlpSpec, seed: u64) -> Result<Self> {
        let mut mlp = Self::zeros(spec)?;
        let mut rng = substream(seed, stream::MODEL_INIT);
        for l in 0..mlp.num_layers() {
            let (fan_in, fan_out) = (mlp.dims[l], mlp.dims[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let off = mlp.offsets[l];
            for w in &mut mlp.params[off..off + fan_in * fan_out] {
                *w = S::from_f64(rng.random_range(-bound..bound));
            }
        }
        Ok(mlp)
    }

    /// Rebuilds a network from a flat parameter vector in checkpoint order.
    pub fn from_params(spec: MlpSpec, params: Vec<S>) -> Result<Self> {
        let mut mlp = Self::zeros(spec)?;
        if params.len() != mlp.params.len() {
            return Err(Error::Shape(format!(
                "{} parameters supplied, architecture needs {}",
                params.len(),
                mlp.params.len()
            )));
        }
        mlp.params = params;
        Ok(mlp)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }
    pub fn layer_dims(&self) -> &[usize] {
        &self.dims
    }
    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }
    pub fn num_params(&self) -> usize {
        self.params.len()
    }
    pub fn params(&self) -> &[S] {
        &self.params
    }
    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    /// `(weight, bias)` of layer `l`; the weight is `(out, in)` row-major.
    pub fn layer(&self, l: usize) -> (&[S], &[S]) {
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        let off = self.offsets[l];
        (
            &self.params[off..off + i * o],
            &self.params[off + i * o..off + i * o + o],
        )
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [S], &mut [S]) {
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        let off = self.offsets[l];
        let (w, b) = self.params[off..off + i * o + o].split_at_mut(i * o);
        (w, b)
    }

    pub fn cast<T: Scalar>(&self) -> Mlp<T> {
        Mlp {
            spec: self.spec.clone(),
            dims: self.dims.clone(),
            offsets: self.offsets.clone(),
            params: self.params.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }

    fn input_rows(&self, x: &[S], t: &[usize]) -> Result<Vec<S>> {
        let n = self.spec.data_dim;
        let e = self.spec.embed_dim;
        let rows = t.len();
        if x.len() != rows * n {
            return Err(Error::Shape(format!(
                "input has {} values, expected {} rows of width {n}",
                x.len(),
                rows
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        let mut cache: Vec<Option<Vec<S>>> = vec![None; self.spec.horizon + 1];
        let mut input = Vec::with_capacity(rows * (n + e));
        for (r, &tr) in t.iter().enumerate() {
            if tr == 0 || tr > self.spec.horizon {
                return Err(Error::Timestep {
                    t: tr,
                    lo: 1,
                    hi: self.spec.horizon,
                });
            }
            let emb = cache[tr].get_or_insert_with(|| {
                embed_tau(tr as f64 / self.spec.horizon as f64, e)
                    .into_iter()
                    .map(S::from_f64)
                    .collect()
            });
            input.extend_from_slice(&x[r * n..(r + 1) * n]);
            input.extend_from_slice(emb);
        }
        Ok(input)
    }

    fn affine(&self, l: usize, a: &[S], rows: usize) -> Vec<S> {
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        let (w, b) = self.layer(l);
        let mut z = Vec::with_capacity(rows * o);
        for _ in 0..rows {
            z.extend_from_slice(b);
        }
        // Z = A W^T + Z
        unsafe {
            S::gemm(
                rows,
                i,
                o,
                S::ONE,
                a.as_ptr(),
                i as isize,
                1,
                w.as_ptr(),
                1,
                i as isize,
                S::ONE,
                z.as_mut_ptr(),
                o as isize,
                1,
            );
        }
        z
    }

    fn run(&self, x: &[S], t: &[usize], keep: bool) -> Result<Trace<S>> {
        let rows = t.len();
        let mut a = self.input_rows(x, t)?;
        let layers = self.num_layers();
        let mut trace = Trace {
            acts: Vec::new(),
            pre: Vec::new(),
            cdf: Vec::new(),
            out: Vec::new(),
        };
        let half = S::from_f64(0.5);
        let inv_sqrt2 = S::from_f64(INV_SQRT_2);
        for l in 0..layers {
            let z = self.affine(l, &a, rows);
            if l + 1 == layers {
                if keep {
                    trace.acts.push(a);
                }
                trace.out = z;
                break;
            }
            let cdf: Vec<S> = z
                .iter()
                .map(|&v| half * (S::ONE + (v * inv_sqrt2).erf()))
                .collect();
            let next: Vec<S> = z.iter().zip(&cdf).map(|(&v, &c)| v * c).collect();
            if keep {
                trace.acts.push(a);
                trace.pre.push(z);
                trace.cdf.push(cdf);
            }
            a = next;
        }
        Ok(trace)
    }

    /// Predictions for `t.len()` rows of `x` (row-major, width `n`).
    pub fn forward_batch(&self, x: &[S], t: &[usize]) -> Result<Vec<S>> {
        Ok(self.run(x, t, false)?.out)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[S], t: usize) -> Result<Vec<S>> {
        self.forward_batch(x, &[t])
    }

    /// Weighted mean squared error (sum over coordinates, mean over rows)
    /// and its exact gradient with respect to every parameter.
    pub fn loss_and_grad(&self, batch: &Batch<S>) -> Result<(f64, Vec<S>)> {
        let rows = batch.len();
        if rows == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        let n = self.spec.data_dim;
        if batch.target.len() != rows * n || batch.weight.len() != rows {
            return Err(Error::Shape("batch targets or weights have the wrong size".into()));
        }
        let trace = self.run(&batch.x, &batch.t, true)?;

        let mut loss = 0.0f64;
        let mut dz = vec![S::ZERO; rows * n];
        let scale = 2.0 / rows as f64;
        for r in 0..rows {
            let w = batch.weight[r];
            let ws = w * S::from_f64(scale);
            let mut sq = 0.0f64;
            for j in 0..n {
                let d = trace.out[r * n + j] - batch.target[r * n + j];
                sq += d.to_f64() * d.to_f64();
                dz[r * n + j] = ws * d;
            }
            loss += w.to_f64() * sq;
        }
        loss /= rows as f64;

        let mut grads = vec![S::ZERO; self.params.len()];
        let inv_sqrt_2pi = S::from_f64(INV_SQRT_2PI);
        let neg_half = S::from_f64(-0.5);
        for l in (0..self.num_layers()).rev() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            let a = &trace.acts[l];
            let off = self.offsets[l];
            {
                let (gw, gb) = grads[off..off + i * o + o].split_at_mut(i * o);
                // dW = dZ^T A
                unsafe {
                    S::gemm(
                        o,
                        rows,
                        i,
                        S::ONE,
                        dz.as_ptr(),
                        1,
                        o as isize,
                        a.as_ptr(),
                        i as isize,
                        1,
                        S::ZERO,
                        gw.as_mut_ptr(),
                        i as isize,
                        1,
                    );
                }
                for r in 0..rows {
                    for (g, d) in gb.iter_mut().zip(&dz[r * o..(r + 1) * o]) {
                        *g += *d;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let (w, _) = self.layer(l);
            let mut da = vec![S::ZERO; rows * i];
            // dA = dZ W
            unsafe {
                S::gemm(
                    rows,
                    o,
                    i,
                    S::ONE,
                    dz.as_ptr(),
                    o as isize,
                    1,
                    w.as_ptr(),
                    i as isize,
                    1,
                    S::ZERO,
                    da.as_mut_ptr(),
                    i as isize,
                    1,
                );
            }
            let (pre, cdf) = (&trace.pre[l - 1], &trace.cdf[l - 1]);
            for ((d, &z), &c) in da.iter_mut().zip(pre).zip(cdf) {
                let pdf = (neg_half * z * z).exp() * inv_sqrt_2pi;
                *d *= c + z * pdf;
            }
            dz = da;
        }
        Ok((loss, grads))
    }

    /// [`Mlp::loss_and_grad`] on a slice of training pairs.
    pub fn loss_and_grad_pairs(&self, pairs: &[TrainingPair]) -> Result<(f64, Vec<S>)> {
        self.loss_and_grad(&Batch::from_pairs(pairs))
    }
}

/// Exact GELU, `z * Phi(z)`.
pub fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + libm::erf(z * INV_SQRT_2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::batch_loss;
    use crate::rng::normal;

    fn tiny(seed: u64) -> Mlp<f64> {
        Mlp::init_params(MlpSpec::new(2, 4, vec![4, 4], 10), seed).unwrap()
    }

    fn random_batch(rows: usize, seed: u64) -> Batch<f64> {
        let mut rng = substream(seed, 99);
        Batch {
            x: (0..rows * 2).map(|_| normal(&mut rng)).collect(),
            target: (0..rows * 2).map(|_| normal(&mut rng)).collect(),
            t: (0..rows).map(|r| 1 + r % 10).collect(),
            weight: (0..rows).map(|r| 0.5 + r as f64 * 0.1).collect(),
        }
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let spec = MlpSpec::standard(2, 200);
        let a = Mlp::<f32>::init_params(spec.clone(), 7).unwrap();
        let b = Mlp::<f32>::init_params(spec, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.layer_dims()[0], 18);
        assert_eq!(a.layer(0).0.len(), 256 * 18);
        assert_eq!(a.layer(0).1.len(), 256);
        assert!(a.layer(0).1.iter().all(|v| *v == 0.0));
        let bound = 1.0 / 18f32.sqrt();
        assert!(a.layer(0).0.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn parameter_count_n200() {
        // (216*256 + 256) + (256*512 + 512) + (512*1024 + 1024)
        // + (1024*512 + 512) + (512*256 + 256) + (256*200 + 200)
        let expected = 55_552 + 131_584 + 525_312 + 524_800 + 131_328 + 51_400;
        assert_eq!(MlpSpec::standard(200, 200).num_params(), expected);
        let m = Mlp::<f32>::zeros(MlpSpec::standard(200, 200)).unwrap();
        assert_eq!(m.num_params(), expected);
    }

    #[test]
    fn embedding_properties() {
        let e = embed_tau(0.0, 16);
        for k in 0..8 {
            assert_eq!(e[2 * k], 0.0);
            assert_eq!(e[2 * k + 1], 1.0);
        }
        let all: Vec<Vec<f64>> = (1..=200).map(|t| time_embedding(t, 200, 16).unwrap()).collect();
        for i in 0..all.len() {
            let norm: f64 = all[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 4.0 + 1e-12);
            for j in 0..i {
                assert_ne!(all[i], all[j]);
            }
        }
        assert!(time_embedding(3, 10, 5).is_err());
        assert!(time_embedding(11, 10, 4).is_err());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let m = Mlp::<f64>::zeros(MlpSpec::standard(3, 50)).unwrap();
        assert_eq!(m.forward(&[1.0, -2.0, 3.0], 5).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn hand_computed_single_hidden_unit() {
        // input [x || emb] -> 1 hidden unit -> 1 output
        let spec = MlpSpec::new(1, 2, vec![1], 4);
        let params = vec![0.7, 0.0, 0.0, 0.1, -1.5, 0.25];
        let m = Mlp::<f64>::from_params(spec, params).unwrap();
        let x = 0.8;
        let h = gelu(0.7 * x + 0.1);
        let expected = -1.5 * h + 0.25;
        let got = m.forward(&[x], 2).unwrap()[0];
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn batched_equals_per_sample() {
        let m = tiny(3);
        let b = random_batch(7, 1);
        let all = m.forward_batch(&b.x, &b.t).unwrap();
        for r in 0..7 {
            let one = m.forward(&b.x[r * 2..r * 2 + 2], b.t[r]).unwrap();
            for j in 0..2 {
                assert!((all[r * 2 + j] - one[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_finite_input() {
        let m = tiny(0);
        assert!(matches!(
            m.forward(&[f64::NAN, 0.0], 1),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn loss_matches_batch_loss() {
        let m = tiny(4);
        let b = random_batch(5, 2);
        let (loss, _) = m.loss_and_grad(&b).unwrap();
        let preds = m.forward_batch(&b.x, &b.t).unwrap();
        let pairs: Vec<TrainingPair> = (0..5)
            .map(|r| TrainingPair {
                x_t: b.x[r * 2..r * 2 + 2].to_vec(),
                target: b.target[r * 2..r * 2 + 2].to_vec(),
                t: b.t[r],
                weight: b.weight[r],
            })
            .collect();
        let pv: Vec<Vec<f64>> = (0..5).map(|r| preds[r * 2..r * 2 + 2].to_vec()).collect();
        assert!((loss - batch_loss(&pairs, &pv).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = tiny(5);
        let b = random_batch(6, 3);
        let (_, g) = m.loss_and_grad(&b).unwrap();
        let h = 1e-4;
        let mut worst = 0.0f64;
        for p in 0..m.num_params() {
            let mut up = m.clone();
            up.params_mut()[p] += h;
            let mut dn = m.clone();
            dn.params_mut()[p] -= h;
            let fd = (up.loss_and_grad(&b).unwrap().0 - dn.loss_and_grad(&b).unwrap().0) / (2.0 * h);
            let rel = (fd - g[p]).abs() / (fd.abs() + g[p].abs()).max(1e-7);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-5, "{worst}");
    }

    #[test]
    fn perfect_prediction_has_zero_output_gradient() {
        let m = tiny(6);
        let mut b = random_batch(4, 4);
        b.target = m.forward_batch(&b.x, &b.t).unwrap();
        let (loss, g) = m.loss_and_grad(&b).unwrap();
        assert_eq!(loss, 0.0);
        let last = m.num_layers() - 1;
        let off = m.offsets[last];
        assert!(g[off..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn f32_and_f64_agree() {
        let m64 = tiny(8);
        let m32: Mlp<f32> = m64.cast();
        let b = random_batch(3, 5);
        let x32: Vec<f32> = b.x.iter().map(|v| *v as f32).collect();
        let y64 = m64.forward_batch(&b.x, &b.t).unwrap();
        let y32 = m32.forward_batch(&x32, &b.t).unwrap();
        for (a, b) in y64.iter().zip(&y32) {
            assert!((a - *b as f64).abs() < 1e-5);
        }
    }
}

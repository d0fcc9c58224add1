//! Fully connected autoencoder with hand-written backpropagation.
//!
//! Encoder: `input → 256 → 128 → 64 → 32`, with leaky-ReLU followed by batch
//! normalization after each of the first three linear layers and no
//! activation on the latent layer. Decoder: `32 → 64 → 128 → 256 → input`
//! with leaky-ReLU and a final tanh. Batch norm uses batch statistics while
//! training and running statistics for scoring.

mod bundle;
mod gradcheck;
mod train;

pub use bundle::{ModelBundle, SquashBounds, TrainingMetadata, BUNDLE_MAGIC, BUNDLE_VERSION};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use train::{train, TrainConfig, TrainOutcome};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AeArchitecture {
    pub input_dim: usize,
    /// Encoder hidden widths, each followed by leaky-ReLU + batch norm.
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl AeArchitecture {
    /// The reference network for a given input width.
    pub fn table(input_dim: usize) -> Self {
        Self {
            input_dim,
            encoder_hidden: vec![256, 128, 64],
            latent_dim: 32,
            leaky_slope: 0.01,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn with_widths(input_dim: usize, encoder_hidden: Vec<usize>, latent_dim: usize) -> Self {
        Self { input_dim, encoder_hidden, latent_dim, ..Self::table(input_dim) }
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.encoder_hidden);
        w.push(self.latent_dim);
        w.extend(self.encoder_hidden.iter().rev());
        w.push(self.input_dim);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths().contains(&0) {
            return Err(Error::InvalidArgument("layer width 0".into()));
        }
        if !(self.leaky_slope >= 0.0 && self.bn_eps > 0.0 && (0.0..=1.0).contains(&self.bn_momentum)) {
            return Err(Error::InvalidArgument("bad activation / batch-norm hyperparameters".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::LeakyRelu(a) => {
                if z > 0.0 {
                    z
                } else {
                    a * z
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative given pre-activation `z` and output `y`.
    fn grad(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu(a) => {
                if z > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub dense: Dense,
    pub activation: Activation,
    pub norm: Option<BatchNorm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub arch: AeArchitecture,
    pub blocks: Vec<Block>,
}

/// Intermediate values kept from a training-mode forward pass.
struct BlockCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
    norm: Option<NormCache>,
}

struct NormCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var_unbiased: Array1<f64>,
}

pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    pub output: Array2<f64>,
}

impl ForwardCache {
    /// Sign pattern of every leaky-ReLU pre-activation (used to spot kinks).
    pub(crate) fn relu_pattern(&self) -> Vec<bool> {
        self.blocks.iter().flat_map(|b| b.pre.iter().map(|z| *z > 0.0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<BlockGrad>,
}

impl Gradients {
    /// Flat views in the same order as [`Autoencoder::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in &self.blocks {
            out.push(g.weight.as_slice().expect("standard layout"));
            out.push(g.bias.as_slice().expect("standard layout"));
            if let (Some(gm), Some(bt)) = (&g.gamma, &g.beta) {
                out.push(gm.as_slice().expect("standard layout"));
                out.push(bt.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Huber loss averaged over every element, and its gradient.
pub fn huber(pred: &Array2<f64>, target: ArrayView2<f64>, delta: f64) -> (f64, Array2<f64>) {
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(pred.raw_dim());
    ndarray::Zip::from(&mut grad).and(pred).and(target).for_each(|g, &p, &t| {
        let r = p - t;
        if r.abs() <= delta {
            loss += 0.5 * r * r;
            *g = r / n;
        } else {
            loss += delta * (r.abs() - 0.5 * delta);
            *g = delta * r.signum() / n;
        }
    });
    (loss / n, grad)
}

impl Autoencoder {
    /// Uniform `±1/√fan_in` initialisation for weights and biases.
    pub fn new(arch: AeArchitecture, rng: &mut ChaCha8Rng) -> Result<Self> {
        arch.validate()?;
        let widths = arch.widths();
        let n_layers = widths.len() - 1;
        let n_enc = arch.encoder_hidden.len();
        let mut blocks = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let (fan_in, fan_out) = (widths[i], widths[i + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
            let bias = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..bound));
            let (activation, norm) = if i < n_enc {
                (Activation::LeakyRelu(arch.leaky_slope), Some(BatchNorm::new(fan_out)))
            } else if i == n_enc {
                (Activation::Identity, None)
            } else if i + 1 < n_layers {
                (Activation::LeakyRelu(arch.leaky_slope), None)
            } else {
                (Activation::Tanh, None)
            };
            blocks.push(Block { dense: Dense { weight, bias }, activation, norm });
        }
        Ok(Self { arch, blocks })
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn num_params(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.dense.weight.len() + b.dense.bias.len() + b.norm.as_ref().map_or(0, |n| 2 * n.gamma.len()))
            .sum()
    }

    /// Trainable parameters as flat mutable slices: per block `W, b[, γ, β]`.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(b.dense.weight.as_slice_mut().expect("standard layout"));
            out.push(b.dense.bias.as_slice_mut().expect("standard layout"));
            if let Some(n) = &mut b.norm {
                out.push(n.gamma.as_slice_mut().expect("standard layout"));
                out.push(n.beta.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        Ok(())
    }

    /// Inference pass; batch norm uses running statistics. Pure.
    pub fn forward_eval(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let eps = self.arch.bn_eps;
        let mut h = x.to_owned();
        for b in &self.blocks {
            let mut z = h.dot(&b.dense.weight.t());
            z += &b.dense.bias;
            z.mapv_inplace(|v| b.activation.apply(v));
            if let Some(n) = &b.norm {
                for mut row in z.rows_mut() {
                    for j in 0..row.len() {
                        let xh = (row[j] - n.running_mean[j]) / (n.running_var[j] + eps).sqrt();
                        row[j] = n.gamma[j] * xh + n.beta[j];
                    }
                }
            }
            h = z;
        }
        Ok(h)
    }

    /// Training-mode pass with batch statistics. Needs at least 2 rows when
    /// batch norm is present.
    pub fn forward_train(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let batch = x.nrows();
        if batch < 2 && self.blocks.iter().any(|b| b.norm.is_some()) {
            return Err(Error::InvalidArgument("batch norm training needs batch >= 2".into()));
        }
        let eps = self.arch.bn_eps;
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.to_owned();
        for b in &self.blocks {
            let mut pre = h.dot(&b.dense.weight.t());
            pre += &b.dense.bias;
            let act = pre.mapv(|v| b.activation.apply(v));
            let (out, norm) = match &b.norm {
                None => (act.clone(), None),
                Some(n) => {
                    let mean = act.mean_axis(Axis(0)).expect("batch >= 1");
                    let centered = &act - &mean;
                    let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("batch >= 1");
                    let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
                    let x_hat = &centered * &inv_std;
                    let out = &x_hat * &n.gamma + &n.beta;
                    let unbiased = var.mapv(|v| v * batch as f64 / (batch - 1) as f64);
                    (out, Some(NormCache { x_hat, inv_std, batch_mean: mean, batch_var_unbiased: unbiased }))
                }
            };
            caches.push(BlockCache { input: h, pre, act, norm });
            h = out;
        }
        Ok(ForwardCache { blocks: caches, output: h })
    }

    /// Folds the batch statistics of a training pass into the running estimates.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        let m = self.arch.bn_momentum;
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            if let (Some(n), Some(nc)) = (&mut b.norm, &c.norm) {
                n.running_mean = &n.running_mean * (1.0 - m) + &nc.batch_mean * m;
                n.running_var = &n.running_var * (1.0 - m) + &nc.batch_var_unbiased * m;
            }
        }
    }

    /// Backpropagates `d_out` (gradient w.r.t. the network output).
    pub fn backward(&self, cache: &ForwardCache, d_out: Array2<f64>) -> Gradients {
        let batch = d_out.nrows() as f64;
        let mut grads = Vec::with_capacity(self.blocks.len());
        let mut d = d_out;
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (d_act, gamma, beta) = match (&b.norm, &c.norm) {
                (Some(n), Some(nc)) => {
                    let d_beta = d.sum_axis(Axis(0));
                    let d_gamma = (&d * &nc.x_hat).sum_axis(Axis(0));
                    let d_xhat = &d * &n.gamma;
                    let sum_dxhat = d_xhat.sum_axis(Axis(0));
                    let sum_dxhat_xhat = (&d_xhat * &nc.x_hat).sum_axis(Axis(0));
                    // dx = inv_std / B * (B dx̂ − Σdx̂ − x̂ Σ(dx̂ x̂))
                    let mut dx = &d_xhat * batch - &sum_dxhat - &(&nc.x_hat * &sum_dxhat_xhat);
                    dx *= &(&nc.inv_std / batch);
                    (dx, Some(d_gamma), Some(d_beta))
                }
                _ => (d, None, None),
            };
            let mut d_pre = d_act;
            ndarray::Zip::from(&mut d_pre).and(&c.pre).and(&c.act).for_each(|g, &z, &y| {
                *g *= b.activation.grad(z, y);
            });
            let d_weight = d_pre.t().dot(&c.input).as_standard_layout().into_owned();
            let d_bias = d_pre.sum_axis(Axis(0));
            d = d_pre.dot(&b.dense.weight);
            grads.push(BlockGrad { weight: d_weight, bias: d_bias, gamma, beta });
        }
        grads.reverse();
        Gradients { blocks: grads }
    }

    /// Training-mode Huber loss of reconstructing `target` from `x`, with gradients.
    pub fn loss_and_grads(
        &self,
        x: ArrayView2<f64>,
        target: ArrayView2<f64>,
        delta: f64,
    ) -> Result<(f64, Gradients, ForwardCache)> {
        let cache = self.forward_train(x)?;
        let (loss, d_out) = huber(&cache.output, target, delta);
        let grads = self.backward(&cache, d_out);
        Ok((loss, grads, cache))
    }

    /// Per-row mean squared reconstruction error (inference mode).
    pub fn reconstruction_mse(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let out = self.forward_eval(x)?;
        let d = x.ncols() as f64;
        Ok(out
            .rows()
            .into_iter()
            .zip(x.rows())
            .map(|(o, i)| o.iter().zip(i.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / d)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn probe(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut r = rng(seed);
        Array2::from_shape_fn((rows, cols), |_| r.random_range(-0.8..0.8))
    }

    #[test]
    fn table_architecture_shapes() {
        let arch = AeArchitecture::table(19);
        assert_eq!(arch.widths(), vec![19, 256, 128, 64, 32, 64, 128, 256, 19]);
        let ae = Autoencoder::new(arch, &mut rng(1)).unwrap();
        assert_eq!(ae.blocks.len(), 8);
        assert_eq!(ae.blocks.iter().filter(|b| b.norm.is_some()).count(), 3);
        assert!(ae.blocks[..3].iter().all(|b| b.activation == Activation::LeakyRelu(0.01)));
        assert_eq!(ae.blocks[3].activation, Activation::Identity);
        assert_eq!(ae.blocks[7].activation, Activation::Tanh);
        for w in ae.blocks.windows(2) {
            assert_eq!(w[0].dense.weight.nrows(), w[1].dense.weight.ncols());
        }
    }

    #[test]
    fn outputs_bounded_by_tanh() {
        let ae = Autoencoder::new(AeArchitecture::table(7), &mut rng(2)).unwrap();
        let x = probe(16, 7, 3) * 50.0;
        let y = ae.forward_eval(x.view()).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn eval_is_repeatable() {
        let ae = Autoencoder::new(AeArchitecture::table(5), &mut rng(4)).unwrap();
        let x = probe(3, 5, 5);
        let a = ae.reconstruction_mse(x.view()).unwrap();
        let b = ae.reconstruction_mse(x.view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_loss_point_has_zero_gradient() {
        let ae = Autoencoder::new(AeArchitecture::table(6), &mut rng(6)).unwrap();
        let x = probe(8, 6, 7);
        let target = ae.forward_train(x.view()).unwrap().output;
        let (loss, grads, _) = ae.loss_and_grads(x.view(), target.view(), 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.norm() < 1e-8);
    }

    #[test]
    fn input_scale_chain_rule() {
        // (2x)(W/2)ᵀ leaves every downstream value unchanged, so dL/dW1 doubles
        // and every other gradient is untouched.
        let ae = Autoencoder::new(AeArchitecture::with_widths(5, vec![16, 8], 4), &mut rng(8)).unwrap();
        let x = probe(6, 5, 9);
        let (_, g1, _) = ae.loss_and_grads(x.view(), x.view(), 1.0).unwrap();
        let mut scaled = ae.clone();
        scaled.blocks[0].dense.weight *= 0.5;
        let x2 = &x * 2.0;
        let (_, g2, _) = scaled.loss_and_grads(x2.view(), x.view(), 1.0).unwrap();
        for (a, b) in g1.blocks[0].weight.iter().zip(g2.blocks[0].weight.iter()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * a.abs().max(1e-12));
        }
        assert_eq!(g1.blocks[0].bias, g2.blocks[0].bias);
        assert_eq!(g1.blocks[1..], g2.blocks[1..]);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let ae = Autoencoder::new(AeArchitecture::table(5), &mut rng(1)).unwrap();
        let x = probe(2, 4, 1);
        assert!(matches!(ae.forward_eval(x.view()), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn huber_switches_to_linear() {
        let p = Array2::from_shape_vec((1, 2), vec![0.5, 3.0]).unwrap();
        let t = Array2::zeros((1, 2));
        let (l, g) = huber(&p, t.view(), 1.0);
        assert!((l - (0.125 + 2.5) / 2.0).abs() < 1e-15);
        assert_eq!(g[[0, 0]], 0.25);
        assert_eq!(g[[0, 1]], 0.5);
    }
}

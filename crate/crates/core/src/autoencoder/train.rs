//! Mini-batch RMSProp training with Huber loss, input jitter and early stopping.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::bundle::{ModelBundle, SquashBounds, TrainingMetadata};
use super::{huber, AeArchitecture, Autoencoder};
use crate::error::{Error, Result};
use crate::features::{schema_hash, FEATURE_DIM};
use crate::policy::{calibrate, Thresholds};
use crate::preprocess;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub huber_delta: f64,
    pub jitter_std: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rmsprop_alpha: f64,
    pub rmsprop_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub validation_split: f64,
    pub variance_target: f64,
    /// Encoder hidden widths; the decoder mirrors them.
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            huber_delta: 1.0,
            jitter_std: 0.01,
            batch_size: 64,
            learning_rate: 1e-3,
            rmsprop_alpha: 0.99,
            rmsprop_eps: 1e-8,
            max_epochs: 500,
            patience: 20,
            min_delta: 1e-5,
            validation_split: 0.2,
            variance_target: preprocess::VARIANCE_TARGET,
            encoder_hidden: vec![256, 128, 64],
            latent_dim: 32,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.huber_delta, self.learning_rate, self.rmsprop_eps, self.variance_target];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("training hyperparameters must be positive".into()));
        }
        if !(self.jitter_std >= 0.0 && self.min_delta >= 0.0) {
            return Err(Error::InvalidArgument("jitter and min-delta must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.rmsprop_alpha) {
            return Err(Error::InvalidArgument("rmsprop alpha must be in [0, 1)".into()));
        }
        if self.batch_size < 2 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument("batch >= 2, epochs and patience > 0 required".into()));
        }
        if !(self.validation_split > 0.0 && self.validation_split < 1.0) {
            return Err(Error::InvalidArgument("validation split must be in (0, 1)".into()));
        }
        if self.variance_target > 1.0 {
            return Err(Error::InvalidArgument("variance target must be <= 1".into()));
        }
        Ok(())
    }

    fn describe(&self) -> String {
        format!(
            "huber_delta={} jitter_std={} batch_size={} learning_rate={} max_epochs={} patience={} min_delta={} validation_split={} variance_target={} seed={}",
            self.huber_delta,
            self.jitter_std,
            self.batch_size,
            self.learning_rate,
            self.max_epochs,
            self.patience,
            self.min_delta,
            self.validation_split,
            self.variance_target,
            self.rng_seed
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    /// Inference-mode MSE of every validation row; thresholds are calibrated on these.
    pub validation_scores: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

struct RmsProp {
    sq: Vec<Vec<f64>>,
    lr: f64,
    alpha: f64,
    eps: f64,
}

impl RmsProp {
    fn new(model: &mut Autoencoder, cfg: &TrainConfig) -> Self {
        let sq = model.params_mut().iter().map(|p| vec![0.0; p.len()]).collect();
        Self { sq, lr: cfg.learning_rate, alpha: cfg.rmsprop_alpha, eps: cfg.rmsprop_eps }
    }

    fn step(&mut self, model: &mut Autoencoder, grads: &super::Gradients) {
        for ((p, g), s) in model.params_mut().into_iter().zip(grads.slices()).zip(&mut self.sq) {
            for ((pi, gi), si) in p.iter_mut().zip(g).zip(s.iter_mut()) {
                *si = self.alpha * *si + (1.0 - self.alpha) * gi * gi;
                *pi -= self.lr * gi / (si.sqrt() + self.eps);
            }
        }
    }
}

fn rows_to_array(rows: &[Vec<f64>], idx: &[usize]) -> Array2<f64> {
    let d = rows.first().map_or(0, Vec::len);
    let mut a = Array2::zeros((idx.len(), d));
    for (mut r, &i) in a.rows_mut().into_iter().zip(idx) {
        r.assign(&ndarray::ArrayView1::from(&rows[i]));
    }
    a
}

/// Fits scaler, PCA and squash on the training split, trains the network,
/// and calibrates thresholds on the validation split.
pub fn train<R: AsRef<[f64]>>(clean_features: &[R], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = clean_features.len();
    for r in clean_features {
        if r.as_ref().len() != FEATURE_DIM {
            return Err(Error::DimensionMismatch { expected: FEATURE_DIM, got: r.as_ref().len() });
        }
    }
    let n_val = ((n as f64 * cfg.validation_split).round() as usize).max(1);
    if n < n_val + cfg.batch_size {
        return Err(Error::InvalidArgument(format!(
            "{n} rows is too few for batch {} plus validation",
            cfg.batch_size
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(cfg.rng_seed, Stream::Training, 0));
    let (val_idx, train_idx) = order.split_at(n_val);

    let train_raw: Vec<&[f64]> = train_idx.iter().map(|&i| clean_features[i].as_ref()).collect();
    let (scaler, pca) = preprocess::fit(&train_raw, cfg.variance_target)?;
    let reduce = |i: usize| preprocess::transform(clean_features[i].as_ref(), &scaler, &pca);
    let train_red = train_idx.iter().map(|&i| reduce(i)).collect::<Result<Vec<_>>>()?;
    let val_red = val_idx.iter().map(|&i| reduce(i)).collect::<Result<Vec<_>>>()?;
    let squash = SquashBounds::fit(&train_red)?;

    let train_x: Vec<Vec<f64>> = train_red.iter().map(|y| squash.apply(y)).collect();
    assert!(train_x.iter().flatten().all(|v| (-1.0..=1.0).contains(v)), "training targets outside [-1, 1]");
    let val_x = rows_to_array(
        &val_red.iter().map(|y| squash.apply(y)).collect::<Vec<_>>(),
        &(0..val_red.len()).collect::<Vec<_>>(),
    );

    let arch = AeArchitecture::with_widths(pca.d_out, cfg.encoder_hidden.clone(), cfg.latent_dim);
    let mut model = Autoencoder::new(arch, &mut stream_rng(cfg.rng_seed, Stream::Training, 1))?;
    let mut opt = RmsProp::new(&mut model, cfg);
    let jitter = Normal::new(0.0, cfg.jitter_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let mut best = (f64::INFINITY, model.clone(), 0usize);
    let mut since_best = 0;
    let (mut train_hist, mut val_hist) = (Vec::new(), Vec::new());
    let mut shuffle_rng = stream_rng(cfg.rng_seed, Stream::Training, 2);
    let mut jitter_rng = stream_rng(cfg.rng_seed, Stream::Jitter, 0);
    let mut idx: Vec<usize> = (0..train_x.len()).collect();

    for epoch in 0..cfg.max_epochs {
        idx.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        // an incomplete trailing batch is skipped; reshuffling covers it next epoch
        for chunk in idx.chunks_exact(cfg.batch_size) {
            let target = rows_to_array(&train_x, chunk);
            let mut input = Array2::zeros(target.raw_dim());
            for (mut row, &i) in input.rows_mut().into_iter().zip(chunk) {
                for (v, y) in row.iter_mut().zip(&train_red[i]) {
                    *v = y + jitter.sample(&mut jitter_rng);
                }
                let s = squash.apply(row.as_slice().expect("contiguous row"));
                row.assign(&ndarray::ArrayView1::from(&s));
            }
            let (loss, grads, cache) = model.loss_and_grads(input.view(), target.view(), cfg.huber_delta)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("training loss {loss} after {batches} batches"),
                });
            }
            model.update_running_stats(&cache);
            opt.step(&mut model, &grads);
            epoch_loss += loss;
            batches += 1;
        }
        let val_loss = eval_loss(&model, val_x.view(), cfg.huber_delta)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, detail: format!("validation loss {val_loss}") });
        }
        train_hist.push(epoch_loss / batches as f64);
        val_hist.push(val_loss);
        log::debug!("epoch {epoch}: train {:.6e} val {:.6e}", epoch_loss / batches as f64, val_loss);
        if val_loss < best.0 - cfg.min_delta {
            best = (val_loss, model.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let (best_val, model, best_epoch) = best;
    let validation_scores = model.reconstruction_mse(val_x.view())?;
    let thresholds: Thresholds = calibrate(&validation_scores)?;
    let metadata = TrainingMetadata {
        optimizer: format!("rmsprop alpha={} eps={}", cfg.rmsprop_alpha, cfg.rmsprop_eps),
        config: cfg.describe(),
        epochs_run: val_hist.len(),
        best_epoch,
        best_val_loss: best_val,
        train_rows: train_idx.len(),
        val_rows: val_idx.len(),
    };
    let bundle = ModelBundle { schema_hash: schema_hash(), scaler, pca, squash, model, thresholds, metadata };
    Ok(TrainOutcome { bundle, validation_scores, train_loss: train_hist, val_loss: val_hist })
}

fn eval_loss(model: &Autoencoder, x: ArrayView2<f64>, delta: f64) -> Result<f64> {
    let out = model.forward_eval(x)?;
    Ok(huber(&out, x, delta).0)
}

//! Trained model container and its binary file format.
//!
//! Layout (all integers little-endian, floats IEEE-754 binary64 LE):
//!
//! ```text
//! magic "PDMB" | version u32 | schema_hash u64
//! arch:    input_dim u32 | n_hidden u32 | hidden[n_hidden] u32 | latent u32
//!          | leaky_slope f64 | bn_eps f64 | bn_momentum f64
//! scaler:  d u32 | epsilon f64 | mean[d] f64 | std[d] f64
//! pca:     d_in u32 | d_out u32 | total_variance f64 | retained_ratio f64
//!          | explained[d_out] f64 | components[d_out * d_in] f64 (row-major)
//! squash:  lo[d_out] f64 | hi[d_out] f64
//! layers:  per layer: weight[out * in] f64 (row-major) | bias[out] f64
//!          [| gamma[out] | beta[out] | running_mean[out] | running_var[out]]
//! thresholds: median | mad | t_soft | t_hard_raw | t_hard  (f64 each)
//! metadata:   len u32 | UTF-8 text, one `key=value` per line
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{AeArchitecture, Autoencoder, BatchNorm};
use crate::error::{Error, Result};
use crate::features::{schema_hash, FeatureVector};
use crate::policy::Thresholds;
use crate::preprocess::{self, FittedPca, FittedScaler};

pub const BUNDLE_MAGIC: [u8; 4] = *b"PDMB";
pub const BUNDLE_VERSION: u32 = 1;

/// Spans narrower than this map with unit slope instead of stretching noise.
const MIN_SPAN: f64 = 1e-12;

/// Per-dimension affine map of the reduced features into `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SquashBounds {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().ok_or(Error::EmptyInput("squash rows"))?.len();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for r in rows {
            for ((l, h), v) in lo.iter_mut().zip(hi.iter_mut()).zip(r) {
                *l = l.min(*v);
                *h = h.max(*v);
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Not clipped: unseen inputs may land outside `[-1, 1]`.
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| {
                let span = h - l;
                if span < MIN_SPAN {
                    v - l
                } else {
                    2.0 * (v - l) / span - 1.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMetadata {
    pub optimizer: String,
    pub config: String,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_rows: usize,
    pub val_rows: usize,
}

impl TrainingMetadata {
    fn to_text(&self) -> String {
        format!(
            "optimizer={}\nconfig={}\nepochs_run={}\nbest_epoch={}\nbest_val_loss={}\ntrain_rows={}\nval_rows={}\n",
            self.optimizer,
            self.config,
            self.epochs_run,
            self.best_epoch,
            self.best_val_loss,
            self.train_rows,
            self.val_rows
        )
    }

    fn from_text(text: &str) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            text.lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| Error::format("bundle metadata", format!("missing {key}")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?.parse().map_err(|_| Error::format("bundle metadata", format!("bad {key}")))
        };
        Ok(Self {
            optimizer: get("optimizer")?.to_string(),
            config: get("config")?.to_string(),
            epochs_run: num("epochs_run")?,
            best_epoch: num("best_epoch")?,
            best_val_loss: get("best_val_loss")?
                .parse()
                .map_err(|_| Error::format("bundle metadata", "bad best_val_loss"))?,
            train_rows: num("train_rows")?,
            val_rows: num("val_rows")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub schema_hash: u64,
    pub scaler: FittedScaler,
    pub pca: FittedPca,
    pub squash: SquashBounds,
    pub model: Autoencoder,
    pub thresholds: Thresholds,
    pub metadata: TrainingMetadata,
}

impl ModelBundle {
    pub fn check_schema(&self) -> Result<()> {
        let runtime = schema_hash();
        if self.schema_hash != runtime {
            return Err(Error::SchemaMismatch { bundle: self.schema_hash, runtime });
        }
        Ok(())
    }

    /// Scaled, projected and squashed network input for a raw feature vector.
    pub fn reduce(&self, f: &FeatureVector) -> Result<Vec<f64>> {
        Ok(self.squash.apply(&preprocess::transform(f.as_slice(), &self.scaler, &self.pca)?))
    }

    /// Reconstruction MSE of an already reduced (squashed) vector.
    pub fn score_reduced(&self, x: &[f64]) -> Result<f64> {
        let row =
            ndarray::ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(self.model.reconstruction_mse(row)?[0])
    }

    pub fn score(&self, f: &FeatureVector) -> Result<f64> {
        self.score_reduced(&self.reduce(f)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(&BUNDLE_MAGIC);
        w.u32(BUNDLE_VERSION);
        w.u64(self.schema_hash);

        let a = &self.model.arch;
        w.u32(a.input_dim as u32);
        w.u32(a.encoder_hidden.len() as u32);
        a.encoder_hidden.iter().for_each(|h| w.u32(*h as u32));
        w.u32(a.latent_dim as u32);
        w.f64s(&[a.leaky_slope, a.bn_eps, a.bn_momentum]);

        w.u32(self.scaler.dim() as u32);
        w.f64(self.scaler.epsilon);
        w.f64s(&self.scaler.mean);
        w.f64s(&self.scaler.std);

        let p = &self.pca;
        w.u32(p.d_in as u32);
        w.u32(p.d_out as u32);
        w.f64s(&[p.total_variance, p.retained_ratio]);
        w.f64s(&p.explained_variance);
        w.f64s(&p.components);

        w.f64s(&self.squash.lo);
        w.f64s(&self.squash.hi);

        for b in &self.model.blocks {
            w.f64s(b.dense.weight.as_slice().expect("standard layout"));
            w.f64s(b.dense.bias.as_slice().expect("standard layout"));
            if let Some(n) = &b.norm {
                for v in [&n.gamma, &n.beta, &n.running_mean, &n.running_var] {
                    w.f64s(v.as_slice().expect("standard layout"));
                }
            }
        }

        let t = &self.thresholds;
        w.f64s(&[t.median, t.mad, t.t_soft, t.t_hard_raw, t.t_hard]);

        let meta = self.metadata.to_text();
        w.u32(meta.len() as u32);
        w.buf.extend_from_slice(meta.as_bytes());
        w.buf
    }

    /// Parses a bundle and verifies its feature schema against the runtime one.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != BUNDLE_MAGIC {
            return Err(Error::format("model bundle", "bad magic"));
        }
        let version = r.u32()?;
        if version != BUNDLE_VERSION {
            return Err(Error::format("model bundle", format!("unsupported version {version}")));
        }
        let hash = r.u64()?;
        let runtime = schema_hash();
        if hash != runtime {
            return Err(Error::SchemaMismatch { bundle: hash, runtime });
        }

        let input_dim = r.len()?;
        let n_hidden = r.len()?;
        let hidden = (0..n_hidden).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let latent = r.len()?;
        let arch = AeArchitecture {
            input_dim,
            encoder_hidden: hidden,
            latent_dim: latent,
            leaky_slope: r.f64()?,
            bn_eps: r.f64()?,
            bn_momentum: r.f64()?,
        };
        arch.validate()?;

        let d = r.len()?;
        let epsilon = r.f64()?;
        let scaler = FittedScaler { mean: r.f64s(d)?, std: r.f64s(d)?, epsilon };

        let d_in = r.len()?;
        let d_out = r.len()?;
        if d_in != d || d_out != input_dim {
            return Err(Error::format("model bundle", "PCA shape does not match scaler / network"));
        }
        let total_variance = r.f64()?;
        let retained_ratio = r.f64()?;
        let explained_variance = r.f64s(d_out)?;
        let components = r.f64s(d_out * d_in)?;
        let pca = FittedPca { components, d_in, d_out, explained_variance, total_variance, retained_ratio };
        let squash = SquashBounds { lo: r.f64s(d_out)?, hi: r.f64s(d_out)? };

        // initialise a template and overwrite every tensor from the file
        let mut model = Autoencoder::new(arch, &mut rand::SeedableRng::seed_from_u64(0))?;
        for b in &mut model.blocks {
            let (out, inp) = b.dense.weight.dim();
            b.dense.weight = Array2::from_shape_vec((out, inp), r.f64s(out * inp)?).expect("sized");
            b.dense.bias = Array1::from(r.f64s(out)?);
            if b.norm.is_some() {
                b.norm = Some(BatchNorm {
                    gamma: Array1::from(r.f64s(out)?),
                    beta: Array1::from(r.f64s(out)?),
                    running_mean: Array1::from(r.f64s(out)?),
                    running_var: Array1::from(r.f64s(out)?),
                });
            }
        }

        let t = r.f64s(5)?;
        let thresholds = Thresholds { median: t[0], mad: t[1], t_soft: t[2], t_hard_raw: t[3], t_hard: t[4] };
        let meta_len = r.len()?;
        let meta =
            std::str::from_utf8(r.take(meta_len)?).map_err(|e| Error::format("bundle metadata", e.to_string()))?;
        let metadata = TrainingMetadata::from_text(meta)?;
        if r.pos != bytes.len() {
            return Err(Error::format("model bundle", format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { schema_hash: hash, scaler, pca, squash, model, thresholds, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|x| self.f64(*x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| {
            Error::format("model bundle", format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        let v = self.u32()? as usize;
        // guards allocation against corrupted counts
        if v > self.buf.len() {
            return Err(Error::format("model bundle", format!("implausible length {v}")));
        }
        Ok(v)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

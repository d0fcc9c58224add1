//! Z-score scaling and SVD-based PCA fitted on clean feature rows.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Floor applied to per-feature standard deviations.
pub const STD_EPSILON: f64 = 1e-8;

/// Default cumulative explained-variance target.
pub const VARIANCE_TARGET: f64 = 0.97;

#[derive(Debug, Clone, PartialEq)]
pub struct FittedScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub epsilon: f64,
}

impl FittedScaler {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn scale(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedPca {
    /// `d_out × d_in`, row-major; rows are orthonormal principal axes.
    pub components: Vec<f64>,
    pub d_in: usize,
    pub d_out: usize,
    /// Variance along each retained axis (`σ² / (N − 1)`).
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
    pub retained_ratio: f64,
}

impl FittedPca {
    pub fn component(&self, k: usize) -> &[f64] {
        &self.components[k * self.d_in..(k + 1) * self.d_in]
    }

    pub fn project(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.d_in {
            return Err(Error::DimensionMismatch { expected: self.d_in, got: z.len() });
        }
        Ok((0..self.d_out).map(|k| self.component(k).iter().zip(z).map(|(c, v)| c * v).sum()).collect())
    }

    /// Back-projection of a reduced vector into the scaled feature space.
    pub fn back_project(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.d_out {
            return Err(Error::DimensionMismatch { expected: self.d_out, got: y.len() });
        }
        let mut z = vec![0.0; self.d_in];
        for (k, &yk) in y.iter().enumerate() {
            for (zi, c) in z.iter_mut().zip(self.component(k)) {
                *zi += yk * c;
            }
        }
        Ok(z)
    }
}

/// Fits the scaler and a PCA retaining the smallest number of components whose
/// cumulative explained variance reaches `variance_target`.
pub fn fit<R: AsRef<[f64]>>(rows: &[R], variance_target: f64) -> Result<(FittedScaler, FittedPca)> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("PCA fit needs at least 2 rows, got {n}")));
    }
    let d = rows[0].as_ref().len();
    if d == 0 {
        return Err(Error::EmptyInput("feature columns"));
    }
    for r in rows {
        let r = r.as_ref();
        if r.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: r.len() });
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("PCA fit rows"));
        }
    }
    if n < d {
        log::warn!("PCA fit with {n} rows for {d} features");
    }

    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut std = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in std.iter_mut().zip(r.as_ref()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for (j, s) in std.iter_mut().enumerate() {
        *s = (*s / n as f64).sqrt();
        if *s < STD_EPSILON {
            log::warn!("feature column {j} is (near-)constant; std floored to {STD_EPSILON}");
            *s = STD_EPSILON;
        }
    }
    let scaler = FittedScaler { mean, std, epsilon: STD_EPSILON };

    let mut data = Vec::with_capacity(n * d);
    for r in rows {
        data.extend(scaler.scale(r.as_ref())?);
    }
    let z = DMatrix::from_row_slice(n, d, &data);
    let svd = z.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::InvalidArgument("SVD did not converge".into()))?;

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let variances: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].powi(2) / (n - 1) as f64).collect();
    let total: f64 = variances.iter().sum();

    let mut d_out = variances.len();
    let mut retained = 1.0;
    if total > 0.0 {
        let mut cum = 0.0;
        for (k, v) in variances.iter().enumerate() {
            cum += v;
            if cum / total >= variance_target {
                d_out = k + 1;
                retained = cum / total;
                break;
            }
        }
    } else {
        d_out = 1;
    }

    let mut components = Vec::with_capacity(d_out * d);
    for &i in order.iter().take(d_out) {
        let mut row: Vec<f64> = v_t.row(i).iter().copied().collect();
        // sign convention: largest-magnitude entry positive
        let pivot = row.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            row.iter_mut().for_each(|x| *x = -*x);
        }
        components.extend(row);
    }

    let pca = FittedPca {
        components,
        d_in: d,
        d_out,
        explained_variance: variances[..d_out].to_vec(),
        total_variance: total,
        retained_ratio: retained,
    };
    Ok((scaler, pca))
}

/// `((x − mean) / std)` projected onto the principal axes.
pub fn transform(x: &[f64], scaler: &FittedScaler, pca: &FittedPca) -> Result<Vec<f64>> {
    pca.project(&scaler.scale(x)?)
}

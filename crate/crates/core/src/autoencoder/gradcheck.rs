//! Central finite-difference check of the analytic gradients.

use ndarray::ArrayView2;
use rand::Rng;

use super::{huber, AeArchitecture, Autoencoder};
use crate::error::Result;
use crate::rng::{stream_rng, Stream};

const STEP: f64 = 1e-5;
/// Denominator floor so that two near-zero gradients do not blow up the ratio.
const REL_FLOOR: f64 = 1e-6;
const SAMPLES_PER_TENSOR: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub entries_checked: usize,
    pub tensors_checked: usize,
    /// Entries skipped because the perturbation crossed a leaky-ReLU kink.
    pub kinks_skipped: usize,
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(REL_FLOOR)
}

/// Compares backprop against `(L(θ+h) − L(θ−h)) / 2h` on sampled entries of
/// every parameter tensor of a freshly initialised network. The reconstruction
/// target is the probe batch itself.
pub fn gradient_check(arch: &AeArchitecture, probe_batch: ArrayView2<f64>, seed: u64) -> Result<GradCheckReport> {
    let mut model = Autoencoder::new(arch.clone(), &mut stream_rng(seed, Stream::Training, 1000))?;
    let (_, grads, _) = model.loss_and_grads(probe_batch, probe_batch, 1.0)?;
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();

    let mut pick = stream_rng(seed, Stream::Training, 1001);
    let mut report =
        GradCheckReport { max_relative_error: 0.0, entries_checked: 0, tensors_checked: 0, kinks_skipped: 0 };

    let eval = |m: &Autoencoder| -> Result<(f64, Vec<bool>)> {
        let cache = m.forward_train(probe_batch)?;
        let loss = huber(&cache.output, probe_batch, 1.0).0;
        Ok((loss, cache.relu_pattern()))
    };
    let base_pattern = eval(&model)?.1;

    for (t, grad) in analytic.iter().enumerate() {
        let len = grad.len();
        let wanted = SAMPLES_PER_TENSOR.min(len);
        let mut checked = 0;
        let mut attempts = 0;
        while checked < wanted && attempts < 8 * wanted {
            attempts += 1;
            let i = if len <= SAMPLES_PER_TENSOR { (attempts - 1) % len } else { pick.random_range(0..len) };
            let orig = model.params_mut()[t][i];
            model.params_mut()[t][i] = orig + STEP;
            let (plus, p_pat) = eval(&model)?;
            model.params_mut()[t][i] = orig - STEP;
            let (minus, m_pat) = eval(&model)?;
            model.params_mut()[t][i] = orig;
            if p_pat != base_pattern || m_pat != base_pattern {
                report.kinks_skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * STEP);
            report.max_relative_error = report.max_relative_error.max(relative_error(grad[i], numeric));
            report.entries_checked += 1;
            checked += 1;
        }
        report.tensors_checked += 1;
    }
    Ok(report)
}

//! Losses and metrics: classification losses, the SSIM + Huber
//! reconstruction loss, their weighted combination, accuracy and PSNR.
//!
//! Scalar functions work on single samples in `f64`. The `*_batch`
//! variants return the batch-mean loss together with its gradient and are
//! what the training engine calls.

pub mod ssim;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::datahub::ImageShape;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Logs inside the binary cross-entropy are floored at `ln(1e-12)`.
pub const LOG_FLOOR: f64 = 1e-12;
/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffWeights {
    pub beta_c: f64,
    pub beta_r: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for TradeoffWeights {
    fn default() -> Self {
        Self { beta_c: 1.0, beta_r: 1.0, alpha: 1.0, gamma: 1.0, delta: 1.0 }
    }
}

impl TradeoffWeights {
    /// Weights for a reconstruction/classification ratio; `f64::INFINITY`
    /// means reconstruction only.
    pub fn from_ratio(ratio: f64) -> Result<Self> {
        let (beta_c, beta_r) = if ratio.is_infinite() && ratio > 0.0 {
            (0.0, 1.0)
        } else if ratio >= 0.0 && ratio.is_finite() {
            (1.0, ratio)
        } else {
            return Err(Error::invalid(format!("trade-off ratio {ratio} must be >= 0")));
        };
        Ok(Self { beta_c, beta_r, ..Self::default() })
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [("beta_c", self.beta_c), ("beta_r", self.beta_r), ("alpha", self.alpha), ("gamma", self.gamma)];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} = {v} must be a finite non-negative real")));
            }
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid(format!("delta = {} must be positive", self.delta)));
        }
        if self.beta_c + self.beta_r <= 0.0 {
            return Err(Error::invalid("beta_c + beta_r must be positive"));
        }
        Ok(())
    }
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|&v| v - lse).collect()
}

/// `−log softmax(logits)_y`, with `y` a zero-based class index.
pub fn categorical_ce(logits: &[f64], y: usize) -> f64 {
    assert!(y < logits.len(), "class index {y} out of range");
    -log_softmax(logits)[y]
}

fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

/// Class-weighted binary cross-entropy, averaged over the `N` attributes.
pub fn weighted_bce(logits: &[f64], y: &[u8], weights: &[f64]) -> f64 {
    assert_eq!(logits.len(), y.len(), "bce label length");
    assert_eq!(logits.len(), weights.len(), "bce weight length");
    let floor = LOG_FLOOR.ln();
    let n = logits.len() as f64;
    let mut s = 0.0;
    for ((&z, &t), &eta) in logits.iter().zip(y).zip(weights) {
        if t != 0 {
            s += eta * (-softplus(-z)).max(floor);
        } else {
            s += (-softplus(z)).max(floor);
        }
    }
    -s / n
}

/// Mean SSIM between two images, clamped to `[0, 1]`.
pub fn ssim(a: &[f64], b: &[f64], shape: ImageShape) -> Result<f64> {
    check_pair(a.len(), b.len(), shape)?;
    Ok(ssim::ssim_raw_with_grad(a, b, shape, None).clamp(0.0, 1.0))
}

fn check_pair(a: usize, b: usize, shape: ImageShape) -> Result<()> {
    if a != b || a != shape.len() {
        return Err(Error::shape(format!("images of {a} and {b} values for shape {shape}")));
    }
    if shape.is_empty() {
        return Err(Error::shape("empty image"));
    }
    Ok(())
}

fn huber_elem(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a < delta {
        0.5 * e * e
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Element-wise Huber loss averaged over all entries.
pub fn huber(a: &[f64], b: &[f64], delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("huber delta must be positive, got {delta}")));
    }
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!("huber on {} vs {} values", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| huber_elem(x - y, delta)).sum::<f64>() / a.len() as f64)
}

/// `α(1 − SSIM) + γ·Huber`.
pub fn reconstruction_loss(
    recon: &[f64],
    target: &[f64],
    shape: ImageShape,
    alpha: f64,
    gamma: f64,
    delta: f64,
) -> Result<f64> {
    check_pair(recon.len(), target.len(), shape)?;
    let h = huber(recon, target, delta)?;
    let s = ssim::ssim_raw_with_grad(recon, target, shape, None);
    Ok(alpha * (1.0 - s) + gamma * h)
}

pub fn combined_loss(class_loss: f64, recon_loss: f64, w: &TradeoffWeights) -> f64 {
    w.beta_c * class_loss + w.beta_r * recon_loss
}

/// Batch-mean cross-entropy and its gradient with respect to the logits.
pub fn categorical_ce_batch<T: Real>(logits: &Array2<T>, labels: &[usize]) -> (f64, Array2<T>) {
    let (b, n) = logits.dim();
    assert_eq!(b, labels.len(), "one label per row");
    let mut grad = Array2::zeros((b, n));
    let mut loss = 0.0;
    let inv = T::of(1.0 / b as f64);
    for ((row, mut g), &y) in logits.rows().into_iter().zip(grad.rows_mut()).zip(labels) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let s: T = row.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + s.ln();
        loss += (lse - row[y]).as_f64();
        for (j, gv) in g.iter_mut().enumerate() {
            let p = (row[j] - lse).exp();
            *gv = (p - if j == y { T::one() } else { T::zero() }) * inv;
        }
    }
    (loss / b as f64, grad)
}

/// Batch-mean weighted BCE and its gradient with respect to the logits.
/// Entries whose log term sits on the floor get zero gradient.
pub fn weighted_bce_batch<T: Real>(logits: &Array2<T>, labels: ArrayView2<u8>, weights: &[f64]) -> (f64, Array2<T>) {
    let (b, n) = logits.dim();
    assert_eq!(labels.dim(), (b, n), "label matrix shape");
    assert_eq!(weights.len(), n, "one weight per attribute");
    let floor = LOG_FLOOR.ln();
    let mut grad = Array2::zeros((b, n));
    let mut loss = 0.0;
    let scale = 1.0 / (b * n) as f64;
    for i in 0..b {
        for j in 0..n {
            let z = logits[[i, j]].as_f64();
            let sig = 1.0 / (1.0 + (-z).exp());
            let (term, g) = if labels[[i, j]] != 0 {
                let l = -softplus(-z);
                (weights[j] * l.max(floor), if l > floor { -weights[j] * (1.0 - sig) } else { 0.0 })
            } else {
                let l = -softplus(z);
                (l.max(floor), if l > floor { sig } else { 0.0 })
            };
            loss -= term;
            grad[[i, j]] = T::of(g * scale);
        }
    }
    (loss * scale, grad)
}

/// Batch-mean reconstruction loss and its gradient with respect to the
/// reconstructions. Rows are images in channel-major order.
///
/// The SSIM term uses the raw per-window mean (not clamped) so the loss
/// stays differentiable.
pub fn reconstruction_loss_batch<T: Real>(
    recon: &Array2<T>,
    target: &Array2<T>,
    shape: ImageShape,
    w: &TradeoffWeights,
) -> (f64, Array2<T>) {
    assert_eq!(recon.dim(), target.dim(), "reconstruction batch shape");
    let (b, d) = recon.dim();
    let mut grad = Array2::zeros((b, d));
    let delta = T::of(w.delta);
    let hscale = T::of(w.gamma / (b * d) as f64);
    let mut ssim_sum = 0.0;
    let mut huber_sum = 0.0;
    for i in 0..b {
        let x = recon.row(i);
        let y = target.row(i);
        let mut g = grad.row_mut(i);
        let gs = g.as_slice_mut().expect("standard layout");
        let xs = x.as_slice().expect("standard layout");
        let ys = y.as_slice().expect("standard layout");
        if w.alpha != 0.0 {
            let s = ssim::ssim_raw_with_grad(xs, ys, shape, Some((gs, T::of(-w.alpha / b as f64))));
            ssim_sum += s.as_f64();
        } else {
            ssim_sum += ssim::ssim_raw_with_grad(xs, ys, shape, None).as_f64();
        }
        for ((gv, &xv), &yv) in gs.iter_mut().zip(xs).zip(ys) {
            let e = xv - yv;
            huber_sum += huber_elem(e.as_f64(), w.delta);
            let de = if e.abs() < delta { e } else { delta * e.signum() };
            *gv += hscale * de;
        }
    }
    let loss = w.alpha * (1.0 - ssim_sum / b as f64) + w.gamma * huber_sum / (b * d) as f64;
    (loss, grad)
}

/// Percentage of rows whose arg-max matches the label.
pub fn accuracy_categorical<T: Real>(outputs: ArrayView2<T>, labels: &[usize]) -> f64 {
    assert_eq!(outputs.nrows(), labels.len(), "one label per row");
    if labels.is_empty() {
        return 0.0;
    }
    let hits = outputs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best == y
        })
        .count();
    100.0 * hits as f64 / labels.len() as f64
}

/// Mean over attributes of the thresholded accuracy, `1[ŷ_n > τ_n] = y_n`.
pub fn accuracy_binary<T: Real>(outputs: ArrayView2<T>, labels: ArrayView2<u8>, thresholds: &[f64]) -> f64 {
    let (b, n) = outputs.dim();
    assert_eq!(labels.dim(), (b, n), "label matrix shape");
    assert_eq!(thresholds.len(), n, "one threshold per attribute");
    if b == 0 || n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for j in 0..n {
        let hits = (0..b)
            .filter(|&i| (outputs[[i, j]].as_f64() > thresholds[j]) == (labels[[i, j]] != 0))
            .count();
        total += hits as f64 / b as f64;
    }
    100.0 * total / n as f64
}

/// `10·log10(1/MSE)` for images in `[0, 1]`, capped at 100 dB.
pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "psnr input length");
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64;
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ce_uniform_is_ln2() {
        assert!((categorical_ce(&[0.0, 0.0], 0) - 2f64.ln()).abs() < 1e-15);
        assert!(categorical_ce(&[800.0, 0.0, 0.0], 0) < 1e-300);
    }

    #[test]
    fn bce_basics() {
        assert!((weighted_bce(&[0.0], &[1], &[1.0]) - 2f64.ln()).abs() < 1e-15);
        let pos = weighted_bce(&[0.3], &[1], &[3.0]);
        let neg = weighted_bce(&[-0.3], &[0], &[3.0]);
        assert!((pos - 3.0 * neg).abs() < 1e-12);
        // saturated wrong answer hits the floor instead of overflowing
        assert!((weighted_bce(&[-1e4], &[1], &[1.0]) + LOG_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn huber_branches() {
        assert_eq!(huber(&[1.0; 4], &[1.0; 4], 1.0).unwrap(), 0.0);
        assert_eq!(huber(&[0.5; 4], &[0.0; 4], 1.0).unwrap(), 0.125);
        assert_eq!(huber(&[2.0; 4], &[0.0; 4], 1.0).unwrap(), 1.5);
        assert!(huber(&[0.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn weights_from_ratio() {
        let w = TradeoffWeights::from_ratio(0.0).unwrap();
        assert_eq!((w.beta_c, w.beta_r), (1.0, 0.0));
        let w = TradeoffWeights::from_ratio(f64::INFINITY).unwrap();
        assert_eq!((w.beta_c, w.beta_r), (0.0, 1.0));
        assert!(TradeoffWeights { beta_c: 0.0, beta_r: 0.0, ..Default::default() }.validate().is_err());
        assert_eq!(combined_loss(0.3, 0.2, &TradeoffWeights::default()), 0.5);
    }

    #[test]
    fn psnr_cap_and_value() {
        assert_eq!(psnr(&[0.2, 0.4], &[0.2, 0.4]), PSNR_CAP);
        assert!((psnr(&[0.0; 4], &[0.1; 4]) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn accuracy_examples() {
        let out = ndarray::array![[0.1, 0.9], [0.8, 0.2], [0.3, 0.7], [0.6, 0.4]];
        assert_eq!(accuracy_categorical(out.view(), &[1, 0, 1, 1]), 75.0);
        let logits = ndarray::array![[5.0, 5.0], [5.0, 5.0]];
        let labels = ndarray::array![[1u8, 1], [1, 1]];
        assert_eq!(accuracy_binary(logits.view(), labels.view(), &[0.0, 0.0]), 100.0);
    }
}

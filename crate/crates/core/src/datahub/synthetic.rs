//! Gaussian-blob image tasks that need no downloads.
//!
//! Every image has a background, a label-dependent pattern, one "private"
//! blob whose position, size and brightness are independent of the label,
//! and a little pixel noise. A classifier only needs the label pattern; a
//! decoder that recovers the private blob has learned something the label
//! does not reveal.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ImageShape;

const BACKGROUND: f64 = 0.05;
const NOISE_STD: f64 = 0.02;

struct Blob {
    cx: f64,
    cy: f64,
    sigma: f64,
    amp: f64,
}

fn paint(img: &mut [f32], shape: ImageShape, blobs: &[(Blob, &dyn Fn(usize) -> f64)], rng: &mut ChaCha8Rng) {
    let noise = Normal::new(0.0, NOISE_STD).unwrap();
    let (h, w) = (shape.height, shape.width);
    for c in 0..shape.channels {
        for y in 0..h {
            let v = (y as f64 + 0.5) / h as f64;
            for x in 0..w {
                let u = (x as f64 + 0.5) / w as f64;
                let mut p = BACKGROUND;
                for (b, gain) in blobs {
                    let d2 = (u - b.cx).powi(2) + (v - b.cy).powi(2);
                    p += gain(c) * b.amp * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
                }
                p += noise.sample(rng);
                img[(c * h + y) * w + x] = p.clamp(0.0, 1.0) as f32;
            }
        }
    }
}

fn private_blob(rng: &mut ChaCha8Rng) -> Blob {
    Blob {
        cx: rng.random_range(0.15..0.85),
        cy: rng.random_range(0.15..0.85),
        sigma: rng.random_range(0.08..0.16),
        amp: rng.random_range(0.3..0.6),
    }
}

fn on_circle(k: usize, n: usize, radius: f64) -> (f64, f64) {
    let t = std::f64::consts::TAU * k as f64 / n.max(1) as f64;
    (0.5 + radius * t.cos(), 0.5 + radius * t.sin())
}

fn class_gain(channels: usize) -> impl Fn(usize) -> f64 {
    move |c| 1.0 - 0.3 * c as f64 / channels as f64
}

fn private_gain(channels: usize) -> impl Fn(usize) -> f64 {
    move |c| 0.7 + 0.3 * c as f64 / channels as f64
}

/// `count` images of an `n_classes`-way task; labels uniform over classes.
pub fn categorical(
    count: usize,
    n_classes: usize,
    shape: ImageShape,
    rng: &mut ChaCha8Rng,
) -> (Array2<f32>, Vec<usize>) {
    let mut images = Array2::zeros((count, shape.len()));
    let mut labels = Vec::with_capacity(count);
    let jitter = Normal::new(0.0, 0.03).unwrap();
    let cg = class_gain(shape.channels);
    let pg = private_gain(shape.channels);
    for mut row in images.rows_mut() {
        let k = rng.random_range(0..n_classes);
        let (cx, cy) = on_circle(k, n_classes, 0.28);
        let class = Blob { cx: cx + jitter.sample(rng), cy: cy + jitter.sample(rng), sigma: 0.12, amp: 0.55 };
        let private = private_blob(rng);
        let blobs: [(Blob, &dyn Fn(usize) -> f64); 2] = [(class, &cg), (private, &pg)];
        paint(row.as_slice_mut().unwrap(), shape, &blobs, rng);
        labels.push(k);
    }
    (images, labels)
}

/// Positive rate of attribute `n` out of `total`, spread over `[0.25, 0.6]`.
pub fn attribute_rate(n: usize, total: usize) -> f64 {
    if total <= 1 {
        0.4
    } else {
        0.25 + 0.35 * n as f64 / (total - 1) as f64
    }
}

/// `count` images with `n_attr` binary attributes; attribute `n` adds a
/// blob at its own position when present.
pub fn binary(
    count: usize,
    n_attr: usize,
    shape: ImageShape,
    rng: &mut ChaCha8Rng,
) -> (Array2<f32>, Array2<u8>) {
    let mut images = Array2::zeros((count, shape.len()));
    let mut labels = Array2::zeros((count, n_attr));
    let cg = class_gain(shape.channels);
    let pg = private_gain(shape.channels);
    for (mut row, mut lab) in images.rows_mut().into_iter().zip(labels.rows_mut()) {
        let mut blobs: Vec<(Blob, &dyn Fn(usize) -> f64)> = Vec::new();
        for n in 0..n_attr {
            if rng.random_bool(attribute_rate(n, n_attr)) {
                lab[n] = 1;
                let (cx, cy) = on_circle(n, n_attr, 0.3);
                blobs.push((Blob { cx, cy, sigma: 0.1, amp: 0.45 }, &cg));
            }
        }
        blobs.push((private_blob(rng), &pg));
        paint(row.as_slice_mut().unwrap(), shape, &blobs, rng);
    }
    (images, labels)
}

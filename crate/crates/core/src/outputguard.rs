//! Output-channel defenses (noise, rounding, softmax, argmax) and the exact
//! size of the rounded-softmax alphabet.
//!
//! Defenses act on the classifier's logits. The attack decoder is the one
//! trained on the clean channel; it is fed whatever the defended channel
//! releases, mapped back into the space it was trained on.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datahub::{ImageShape, LabelKind, LabelSpace, Labels, Split};
use crate::error::{Error, Result};
use crate::jointtrain::{channel_thresholds, score, ReportMeta, EVAL_CHUNK};
use crate::nets::output_mode::release_batch;
use crate::nets::{apply_output_mode, softmax, Network, OutputMode, Released};
use crate::riskmeter::GaussianStats;
use crate::scalar::Real;

/// Where additive noise is injected.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseSpace {
    #[default]
    Logits,
    /// Softmax probabilities (categorical only).
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "scheme")]
pub enum DefenseScheme {
    Identity,
    Gaussian {
        sigma: f64,
        #[serde(default)]
        on: NoiseSpace,
    },
    /// Zero-mean Laplace noise with scale `b`.
    Laplace {
        b: f64,
        #[serde(default)]
        on: NoiseSpace,
    },
    /// Softmax rounded to `decimals` digits.
    Round { decimals: u32 },
    Softmax,
    Argmax,
}

impl DefenseScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DefenseScheme::Gaussian { sigma: s, .. } | DefenseScheme::Laplace { b: s, .. } => {
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(Error::invalid(format!("noise scale {s} must be finite and non-negative")));
                }
            }
            DefenseScheme::Round { decimals: 0 } => return Err(Error::invalid("round(q) needs q >= 1")),
            _ => {}
        }
        Ok(())
    }

    pub fn compatible_with(&self, kind: LabelKind) -> bool {
        match self {
            DefenseScheme::Identity => true,
            DefenseScheme::Gaussian { on, .. } | DefenseScheme::Laplace { on, .. } => {
                *on == NoiseSpace::Logits || kind == LabelKind::Categorical
            }
            DefenseScheme::Round { .. } | DefenseScheme::Softmax | DefenseScheme::Argmax => {
                kind == LabelKind::Categorical
            }
        }
    }

    /// Whether the released values are probabilities rather than logits.
    fn releases_probabilities(&self) -> bool {
        match self {
            DefenseScheme::Gaussian { on, .. } | DefenseScheme::Laplace { on, .. } => *on == NoiseSpace::Softmax,
            DefenseScheme::Round { .. } | DefenseScheme::Softmax => true,
            DefenseScheme::Identity | DefenseScheme::Argmax => false,
        }
    }
}

impl fmt::Display for DefenseScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = |on: &NoiseSpace| if *on == NoiseSpace::Softmax { "@softmax" } else { "" };
        match self {
            DefenseScheme::Identity => write!(f, "identity"),
            DefenseScheme::Gaussian { sigma, on } => write!(f, "gaussian({sigma}){}", suffix(on)),
            DefenseScheme::Laplace { b, on } => write!(f, "laplace({b}){}", suffix(on)),
            DefenseScheme::Round { decimals } => write!(f, "round({decimals})"),
            DefenseScheme::Softmax => write!(f, "softmax"),
            DefenseScheme::Argmax => write!(f, "argmax"),
        }
    }
}

impl FromStr for DefenseScheme {
    type Err = Error;

    /// Parses `identity`, `softmax`, `argmax`, `round(q)`, `gaussian(s)`
    /// and `laplace(b)`; noise names take an optional `@softmax` suffix.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let (body, on) = match t.split_once('@') {
            Some((b, "softmax")) => (b.to_string(), NoiseSpace::Softmax),
            Some((b, "logits")) => (b.to_string(), NoiseSpace::Logits),
            Some(_) => return Err(Error::invalid(format!("unknown noise placement in `{s}`"))),
            None => (t.clone(), NoiseSpace::Logits),
        };
        let arg = |name: &str| -> Option<&str> { body.strip_prefix(name)?.strip_prefix('(')?.strip_suffix(')') };
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad number in `{s}`")));
        let scheme = match body.as_str() {
            "identity" | "logits" => DefenseScheme::Identity,
            "softmax" => DefenseScheme::Softmax,
            "argmax" => DefenseScheme::Argmax,
            _ => {
                if let Some(v) = arg("gaussian") {
                    DefenseScheme::Gaussian { sigma: num(v)?, on }
                } else if let Some(v) = arg("laplace") {
                    DefenseScheme::Laplace { b: num(v)?, on }
                } else if let Some(v) = arg("round") {
                    let q = v.trim().parse().map_err(|_| Error::invalid(format!("bad decimals in `{s}`")))?;
                    DefenseScheme::Round { decimals: q }
                } else {
                    return Err(Error::invalid(format!("unknown defense scheme `{s}`")));
                }
            }
        };
        scheme.validate()?;
        Ok(scheme)
    }
}

fn noise(rng: &mut ChaCha8Rng, scheme: &DefenseScheme) -> f64 {
    match *scheme {
        DefenseScheme::Gaussian { sigma, .. } => {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        }
        DefenseScheme::Laplace { b, .. } => {
            // difference of two unit exponentials is a unit Laplace draw
            let e1: f64 = Exp1.sample(rng);
            let e2: f64 = Exp1.sample(rng);
            b * (e1 - e2)
        }
        _ => 0.0,
    }
}

fn perturb_with(outputs: &[f64], scheme: &DefenseScheme, rng: &mut ChaCha8Rng) -> Released {
    match *scheme {
        DefenseScheme::Identity => Released::Vector(outputs.to_vec()),
        DefenseScheme::Gaussian { on, .. } | DefenseScheme::Laplace { on, .. } => {
            let base = match on {
                NoiseSpace::Logits => outputs.to_vec(),
                NoiseSpace::Softmax => softmax(outputs),
            };
            Released::Vector(base.into_iter().map(|v| v + noise(rng, scheme)).collect())
        }
        DefenseScheme::Round { decimals } => apply_output_mode(outputs, OutputMode::Rounded(decimals)),
        DefenseScheme::Softmax => apply_output_mode(outputs, OutputMode::Softmax),
        DefenseScheme::Argmax => apply_output_mode(outputs, OutputMode::Argmax),
    }
}

/// Applies a defense to one logit vector. Noise draws come from a stream
/// seeded by `seed`, so the result is reproducible bit-for-bit.
pub fn perturb_outputs(outputs: &[f64], scheme: &DefenseScheme, seed: u64) -> Result<Released> {
    scheme.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(perturb_with(outputs, scheme, &mut rng))
}

/// Applies a defense to every row of a logit matrix, drawing noise from a
/// single stream in row order. Argmax rows come back as one-hot vectors.
pub fn perturb_batch<T: Real>(logits: ArrayView2<T>, scheme: &DefenseScheme, seed: u64) -> Result<Array2<f64>> {
    scheme.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros(logits.dim());
    let mut row = vec![0.0; logits.ncols()];
    for (src, mut dst) in logits.rows().into_iter().zip(out.rows_mut()) {
        for (r, &v) in row.iter_mut().zip(src.iter()) {
            *r = v.as_f64();
        }
        match perturb_with(&row, scheme, &mut rng) {
            Released::Vector(v) => dst.iter_mut().zip(v).for_each(|(d, v)| *d = v),
            Released::Index(k) => dst[k] = 1.0,
        }
    }
    Ok(out)
}

/// Number of softmax vectors over `n` outputs whose entries are multiples of
/// `10^-q`: the stars-and-bars count `C(10^q + n - 1, n - 1)`.
pub fn alphabet_size(q: u32, n: usize) -> Result<BigUint> {
    if n < 2 {
        return Err(Error::invalid(format!("alphabet size needs at least 2 outputs, got {n}")));
    }
    if q == 0 {
        return Err(Error::invalid("alphabet size needs q >= 1"));
    }
    let stars = BigUint::from(10u32).pow(q);
    Ok(binomial(&(stars + BigUint::from(n - 1)), n - 1))
}

/// `C(m, k)` by the running product `C(m, i) = C(m, i-1) * (m-i+1) / i`,
/// which stays integral at every step.
fn binomial(m: &BigUint, k: usize) -> BigUint {
    let mut c = BigUint::one();
    for i in 1..=k {
        let i = BigUint::from(i);
        c = c * (m - &i + BigUint::one()) / i;
    }
    c
}

/// `log2` of the rounded-softmax alphabet, in bits.
pub fn entropy_bound(q: u32, n: usize) -> Result<f64> {
    Ok(log2_big(&alphabet_size(q, n)?))
}

fn log2_big(x: &BigUint) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = x.bits();
    if bits <= 64 {
        return x.to_f64().unwrap_or(f64::INFINITY).log2();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_u64().expect("top 64 bits fit");
    shift as f64 + (top as f64).log2()
}

/// One row of a defense sweep. Skipped schemes carry a reason and NaN
/// metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefenseRow {
    pub scheme: String,
    pub acc: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub risk: f64,
    pub note: String,
}

impl DefenseRow {
    pub fn is_skipped(&self) -> bool {
        !self.note.is_empty()
    }
}

pub fn write_defense_csv(rows: &[DefenseRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("csv: {e}")))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Everything a sweep needs besides the models.
pub struct SweepInputs<'a> {
    pub test: &'a Split,
    /// Split over which the decoder is averaged per predicted class for the
    /// argmax channel (typically the training split).
    pub reference: &'a Split,
    pub shape: ImageShape,
    pub label_space: &'a LabelSpace,
    /// Channel the decoder was trained on.
    pub channel: OutputMode,
    pub stats: &'a GaussianStats,
    pub dataset: &'a str,
    pub seed: u64,
}

/// Smallest probability a released zero is mapped to before taking logs.
const PROB_FLOOR: f64 = 1e-12;

/// Evaluates each scheme: accuracy through the defended channel, and the
/// reconstruction quality of `g` fed the defended outputs.
///
/// The decoder is fed in the space it was trained on. Probability outputs
/// going to a logits-trained decoder are mapped through `ln` (softmax is
/// shift invariant, so log-probabilities are valid logits). An argmax index
/// is consistent with every input predicted as that class, so its
/// reconstruction is the decoder's output averaged over the reference
/// samples with that prediction.
pub fn sweep_defenses<T: Real>(
    f: &Network<T>,
    g: &Network<T>,
    inputs: &SweepInputs<'_>,
    schemes: &[DefenseScheme],
) -> Result<Vec<DefenseRow>> {
    for s in schemes {
        s.validate()?;
    }
    let kind = inputs.label_space.kind;
    let x: Array2<T> = inputs.test.images.mapv(|v| T::of(v as f64));
    let logits = f.infer_chunked(&x, EVAL_CHUNK);
    let centroids = if schemes.contains(&DefenseScheme::Argmax) && kind == LabelKind::Categorical {
        Some(class_reconstructions(f, g, inputs.reference, inputs.channel, inputs.label_space.n_outputs))
    } else {
        None
    };

    let run = |scheme: &DefenseScheme| -> Result<DefenseRow> {
        if !scheme.compatible_with(kind) || !inputs.channel.compatible_with(kind) {
            log::warn!("skipping {scheme}: not applicable to {kind:?} labels");
            return Ok(DefenseRow {
                scheme: scheme.to_string(),
                acc: f64::NAN,
                psnr: f64::NAN,
                ssim: f64::NAN,
                risk: f64::NAN,
                note: format!("skipped: incompatible with {kind:?} labels"),
            });
        }
        let meta = ReportMeta { dataset: inputs.dataset, output_mode: scheme.to_string(), seed: inputs.seed };
        let report = if *scheme == DefenseScheme::Identity {
            // same path as jointtrain::evaluate, kept in the model's precision
            let released = release_batch(&logits, inputs.channel);
            let recon = g.infer_chunked(&released, EVAL_CHUNK);
            let th = channel_thresholds(inputs.label_space, inputs.channel);
            score(released.view(), recon.view(), inputs.test, &th, inputs.shape, Some(inputs.stats), meta)?
        } else {
            let defended = perturb_batch(logits.view(), scheme, inputs.seed)?;
            let recon = match scheme {
                DefenseScheme::Argmax => {
                    let c = centroids.as_ref().expect("class reconstructions computed for argmax");
                    one_hot_rows(&defended, c)
                }
                _ => {
                    let fed = to_channel(&defended, scheme.releases_probabilities(), inputs.channel);
                    g.infer_chunked(&fed.mapv(T::of), EVAL_CHUNK).mapv(|v| v.as_f64())
                }
            };
            let th = if scheme.releases_probabilities() {
                vec![0.5; inputs.label_space.n_outputs]
            } else {
                channel_thresholds(inputs.label_space, OutputMode::Logits)
            };
            score(defended.view(), recon.view(), inputs.test, &th, inputs.shape, Some(inputs.stats), meta)?
        };
        Ok(DefenseRow {
            scheme: scheme.to_string(),
            acc: report.acc,
            psnr: report.psnr,
            ssim: report.ssim,
            risk: report.risk,
            note: String::new(),
        })
    };

    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(schemes.len().max(1));
    let mut rows: Vec<Option<Result<DefenseRow>>> = (0..schemes.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        for (chunk_rows, chunk_schemes) in
            rows.chunks_mut(schemes.len().div_ceil(workers).max(1)).zip(schemes.chunks(schemes.len().div_ceil(workers).max(1)))
        {
            let run = &run;
            s.spawn(move || {
                for (slot, scheme) in chunk_rows.iter_mut().zip(chunk_schemes) {
                    *slot = Some(run(scheme));
                }
            });
        }
    });
    rows.into_iter().map(|r| r.expect("every scheme evaluated")).collect()
}

/// Maps defended values into the decoder's input space.
fn to_channel(values: &Array2<f64>, probabilities: bool, channel: OutputMode) -> Array2<f64> {
    match (probabilities, channel) {
        (true, OutputMode::Logits) => values.mapv(|p| p.max(PROB_FLOOR).ln()),
        (false, OutputMode::Logits) => values.clone(),
        (false, _) => release_batch(values, channel),
        (true, _) => values.clone(),
    }
}

/// Mean decoder output per predicted class over `reference`. Classes never
/// predicted fall back to the overall mean.
fn class_reconstructions<T: Real>(
    f: &Network<T>,
    g: &Network<T>,
    reference: &Split,
    channel: OutputMode,
    n: usize,
) -> Array2<f64> {
    let x: Array2<T> = reference.images.mapv(|v| T::of(v as f64));
    let logits = f.infer_chunked(&x, EVAL_CHUNK);
    let recon = g.infer_chunked(&release_batch(&logits, channel), EVAL_CHUNK).mapv(|v| v.as_f64());
    let mut sums = Array2::<f64>::zeros((n, recon.ncols()));
    let mut counts = vec![0usize; n];
    let mut row = vec![0.0; logits.ncols()];
    for (z, r) in logits.rows().into_iter().zip(recon.rows()) {
        row.iter_mut().zip(z.iter()).for_each(|(d, v)| *d = v.as_f64());
        let k = crate::nets::argmax(&row);
        counts[k] += 1;
        let mut s = sums.row_mut(k);
        s += &r;
    }
    let overall = recon.mean_axis(ndarray::Axis(0)).unwrap_or_else(|| ndarray::Array1::zeros(recon.ncols()));
    for (k, mut s) in sums.rows_mut().into_iter().enumerate() {
        if counts[k] == 0 {
            s.assign(&overall);
        } else {
            s /= counts[k] as f64;
        }
    }
    sums
}

fn one_hot_rows(one_hot: &Array2<f64>, table: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((one_hot.nrows(), table.ncols()));
    for (h, mut o) in one_hot.rows().into_iter().zip(out.rows_mut()) {
        let k = h.iter().position(|&v| v == 1.0).expect("one-hot row");
        o.assign(&table.row(k));
    }
    out
}

/// Accuracy of released vectors only, for callers that skip the decoder.
pub fn defended_accuracy<T: Real>(logits: ArrayView2<T>, labels: &Labels, scheme: &DefenseScheme, seed: u64) -> Result<f64> {
    let defended = perturb_batch(logits, scheme, seed)?;
    Ok(match labels {
        Labels::Categorical(y) => crate::objectives::accuracy_categorical(defended.view(), y),
        Labels::Binary(m) => {
            let t = if scheme.releases_probabilities() { 0.5 } else { 0.0 };
            crate::objectives::accuracy_binary(defended.view(), m.view(), &vec![t; m.ncols()])
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_rounding_example() {
        // logits whose softmax is [0.87652345, 0.12347655]
        let z = [0.87652345f64.ln(), 0.12347655f64.ln()];
        let r = perturb_outputs(&z, &DefenseScheme::Round { decimals: 1 }, 0).unwrap();
        assert_eq!(r, Released::Vector(vec![0.9, 0.1]));
    }

    #[test]
    fn zero_noise_is_identity() {
        let z = [0.3, -1.0, 2.5];
        let g = perturb_outputs(&z, &DefenseScheme::Gaussian { sigma: 0.0, on: NoiseSpace::Logits }, 7).unwrap();
        assert_eq!(g, Released::Vector(z.to_vec()));
    }

    #[test]
    fn small_alphabets() {
        assert_eq!(alphabet_size(1, 2).unwrap(), BigUint::from(11u32));
        assert_eq!(alphabet_size(1, 3).unwrap(), BigUint::from(66u32));
        assert_eq!(alphabet_size(2, 2).unwrap(), BigUint::from(101u32));
        assert!(alphabet_size(1, 1).is_err());
        assert!((entropy_bound(1, 2).unwrap() - 11f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn big_log2_is_accurate() {
        let x = BigUint::from(3u32).pow(200);
        assert!((log2_big(&x) - 200.0 * 3f64.log2()).abs() < 1e-9);
    }

    #[test]
    fn parse_schemes() {
        assert_eq!("round(2)".parse::<DefenseScheme>().unwrap(), DefenseScheme::Round { decimals: 2 });
        assert_eq!(
            "gaussian(0.1)@softmax".parse::<DefenseScheme>().unwrap(),
            DefenseScheme::Gaussian { sigma: 0.1, on: NoiseSpace::Softmax }
        );
        assert_eq!("laplace(0.5)".parse::<DefenseScheme>().unwrap().to_string(), "laplace(0.5)");
        assert!("round(0)".parse::<DefenseScheme>().is_err());
        assert!("gaussian(-1)".parse::<DefenseScheme>().is_err());
        assert!("blur".parse::<DefenseScheme>().is_err());
    }
}

//! Behavioural audit of a released classifier: fine-tune a copy briefly on
//! clean labelled data and watch how far its outputs move. Honest models
//! barely change; models whose outputs were shaped to carry extra
//! information drift away. Also an output-entropy probe.

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datahub::{LabelSpace, Split};
use crate::error::{Error, Result};
use crate::jointtrain::{class_loss, to_real, EVAL_CHUNK};
use crate::nets::output_mode::release_batch;
use crate::nets::{Network, Optimizer, OptimizerKind, OutputMode};
use crate::scalar::Real;

/// Honesty threshold on the viciousness likelihood.
pub const DEFAULT_THRESHOLD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub steps: usize,
    /// Probe samples drawn from the clean pool.
    pub probe_size: usize,
    /// Rows per update; 0 uses the whole probe batch every step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Channel the cosine similarity is measured on.
    pub channel: OutputMode,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            probe_size: 256,
            batch_size: 0,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            channel: OutputMode::Logits,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probe_size == 0 {
            return Err(Error::invalid("probe size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !self.channel.is_differentiable() {
            return Err(Error::invalid(format!("cosine similarity needs a vector channel, not {}", self.channel)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Honest,
    Suspect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    /// Mean cosine similarity before fine-tuning (entry 0) and after each
    /// step.
    pub cosine_trace: Vec<f64>,
    pub v: f64,
    pub verdict: Verdict,
    /// First step at which `v` exceeded the threshold, if any.
    pub first_crossing: Option<usize>,
    /// Evaluation outputs with zero norm, summed over the trace.
    pub zero_norm_outputs: usize,
    pub model_fingerprint: String,
    pub finetune: FinetuneConfig,
}

/// `(1 - C) / 2`, clamped to `[0, 1]`.
pub fn vicious_likelihood(c: f64) -> f64 {
    ((1.0 - c) / 2.0).clamp(0.0, 1.0)
}

pub fn verdict(v: f64, threshold: f64) -> Verdict {
    if v <= threshold {
        Verdict::Honest
    } else {
        Verdict::Suspect
    }
}

/// Mean row-wise cosine similarity of two output matrices. Rows where
/// either side has zero norm contribute 0; their count is returned.
pub fn cosine_similarity_matrix<T: Real>(a: ArrayView2<T>, b: ArrayView2<T>) -> Result<(f64, usize)> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("outputs {:?} vs {:?}", a.dim(), b.dim())));
    }
    if a.nrows() == 0 {
        return Err(Error::invalid("cosine similarity over zero samples"));
    }
    let mut total = 0.0;
    let mut zero = 0;
    for (ra, rb) in a.rows().into_iter().zip(b.rows()) {
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for (&x, &y) in ra.iter().zip(rb.iter()) {
            let (x, y) = (x.as_f64(), y.as_f64());
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        if na == 0.0 || nb == 0.0 {
            zero += 1;
            continue;
        }
        total += (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
    }
    Ok((total / a.nrows() as f64, zero))
}

fn channel_outputs<T: Real>(f: &Network<T>, x: &Array2<T>, channel: OutputMode) -> Array2<T> {
    release_batch(&f.infer_chunked(x, EVAL_CHUNK), channel)
}

/// Mean cosine similarity between the outputs of `f` and `f_plus` on a
/// split, measured on `channel`.
pub fn cosine_similarity_outputs<T: Real>(
    f: &Network<T>,
    f_plus: &Network<T>,
    eval: &Split,
    channel: OutputMode,
) -> Result<(f64, usize)> {
    if f.out_dim() != f_plus.out_dim() {
        return Err(Error::shape(format!("output widths {} and {}", f.out_dim(), f_plus.out_dim())));
    }
    let x = to_real::<T>(eval.images.view());
    let a = channel_outputs(f, &x, channel);
    let b = channel_outputs(f_plus, &x, channel);
    cosine_similarity_matrix(a.view(), b.view())
}

/// Fine-tunes a deep copy of `f` for `cfg.steps` updates of the target-task
/// loss on `probe`, recording the cosine similarity to `f` on `eval` before
/// the first step and after every step.
pub fn finetune_copy<T: Real>(
    f: &Network<T>,
    probe: &Split,
    label_space: &LabelSpace,
    eval: &Split,
    cfg: &FinetuneConfig,
) -> Result<(Network<T>, Vec<f64>, usize)> {
    cfg.validate()?;
    if probe.is_empty() {
        return Err(Error::invalid("fine-tuning needs a non-empty probe batch"));
    }
    if probe.labels.kind() != label_space.kind {
        return Err(Error::invalid("probe labels do not match the label space"));
    }
    let mut copy = f.clone();
    let mut opt = Optimizer::<T>::new(cfg.optimizer, cfg.learning_rate);
    let x_eval = to_real::<T>(eval.images.view());
    let reference = channel_outputs(f, &x_eval, cfg.channel);
    let measure = |m: &Network<T>| cosine_similarity_matrix(reference.view(), channel_outputs(m, &x_eval, cfg.channel).view());

    let (c0, mut zero) = measure(&copy)?;
    let mut trace = vec![c0];
    let batch = if cfg.batch_size == 0 { probe.len() } else { cfg.batch_size.min(probe.len()) };
    let x_probe = to_real::<T>(probe.images.view());
    for step in 0..cfg.steps {
        let start = (step * batch) % probe.len();
        let idx: Vec<usize> = (0..batch).map(|i| (start + i) % probe.len()).collect();
        let xb = x_probe.select(ndarray::Axis(0), &idx);
        let labels = probe.labels.select(&idx);
        copy.zero_grad();
        let logits = copy.forward(xb);
        let (loss, dz) = class_loss(&logits, &labels, label_space);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: 0, batch: step, class_loss: loss, recon_loss: 0.0 });
        }
        copy.backward(&dz);
        opt.step(copy.params_mut());
        let (c, z) = measure(&copy)?;
        zero += z;
        trace.push(c);
    }
    if zero > 0 {
        log::warn!("{zero} evaluation outputs had zero norm and counted as orthogonal");
    }
    Ok((copy, trace, zero))
}

/// Draws `cfg.probe_size` samples from `pool` (all of them if the pool is
/// smaller), fine-tunes a copy of `f`, and scores the final similarity.
/// Fails if the audited model changed during the audit.
pub fn detect<T: Real>(
    f: &Network<T>,
    pool: &Split,
    label_space: &LabelSpace,
    eval: &Split,
    cfg: &FinetuneConfig,
) -> Result<DetectionReport> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::invalid("fine-tuning needs a non-empty probe batch"));
    }
    let before = f.fingerprint();
    let probe = if pool.len() <= cfg.probe_size {
        pool.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = sample(&mut rng, pool.len(), cfg.probe_size).into_vec();
        idx.sort_unstable();
        pool.select(&idx)
    };
    let (_, trace, zero) = finetune_copy(f, &probe, label_space, eval, cfg)?;
    let after = f.fingerprint();
    if before != after {
        return Err(Error::Evaluation("audited model changed during detection".into()));
    }
    let last = *trace.last().expect("trace holds the initial similarity");
    let v = vicious_likelihood(last);
    let first_crossing = trace.iter().position(|&c| vicious_likelihood(c) > cfg.threshold);
    Ok(DetectionReport {
        cosine_trace: trace,
        v,
        verdict: verdict(v, cfg.threshold),
        first_crossing,
        zero_norm_outputs: zero,
        model_fingerprint: before,
        finetune: cfg.clone(),
    })
}

/// Plug-in entropy, in bits, of a per-coordinate histogram with `bins`
/// equal-width bins over each coordinate's observed range, summed over
/// coordinates. An upper-bound proxy for the joint entropy.
pub fn histogram_entropy<T: Real>(outputs: ArrayView2<T>, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::invalid(format!("entropy probe needs at least 2 bins, got {bins}")));
    }
    let n = outputs.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut counts = vec![0usize; bins];
    for col in outputs.columns() {
        let vals: Vec<f64> = col.iter().map(|v| v.as_f64()).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            continue;
        }
        counts.iter_mut().for_each(|c| *c = 0);
        let width = (hi - lo) / bins as f64;
        for v in vals {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        total -= counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n as f64;
                p * p.log2()
            })
            .sum::<f64>();
    }
    Ok(total)
}

/// Entropy probe of `f`'s outputs on a split, on the given channel.
pub fn estimate_output_entropy<T: Real>(f: &Network<T>, split: &Split, bins: usize, channel: OutputMode) -> Result<f64> {
    let x = to_real::<T>(split.images.view());
    histogram_entropy(channel_outputs(f, &x, channel).view(), bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn likelihood_values() {
        assert_eq!(vicious_likelihood(1.0), 0.0);
        assert_eq!(vicious_likelihood(-1.0), 1.0);
        assert!((vicious_likelihood(0.98) - 0.01).abs() < 1e-15);
        assert_eq!(verdict(0.01, 0.01), Verdict::Honest);
        assert_eq!(verdict(0.0100001, 0.01), Verdict::Suspect);
    }

    #[test]
    fn cosine_stubs() {
        let a = array![[1.0f64, 2.0, -0.5], [0.3, 0.1, 4.0]];
        assert!((cosine_similarity_matrix(a.view(), a.view()).unwrap().0 - 1.0).abs() < 1e-15);
        let neg = -&a;
        assert!((cosine_similarity_matrix(a.view(), neg.view()).unwrap().0 + 1.0).abs() < 1e-15);
        let dbl = &a * 2.0;
        assert!((cosine_similarity_matrix(a.view(), dbl.view()).unwrap().0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_rows_count_as_orthogonal() {
        let a = array![[1.0f64, 0.0], [0.0, 0.0]];
        let (c, zero) = cosine_similarity_matrix(a.view(), a.view()).unwrap();
        assert_eq!(zero, 1);
        assert!((c - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_outputs_have_no_entropy() {
        let a = Array2::<f64>::from_elem((50, 3), 0.7);
        assert_eq!(histogram_entropy(a.view(), 8).unwrap(), 0.0);
        assert!(histogram_entropy(a.view(), 1).is_err());
    }
}

//! Joint training of the classifier `F` and decoder `G`, validation-based
//! checkpoint selection, and evaluation into a [`RiskReport`].
//!
//! Each minibatch runs one forward pass of `F` and `G`, then one backward
//! pass: `G` receives the gradient of `β_R·L_R`, `F` the gradient of
//! `β_C·L_C + β_R·L_R` (flowing through the released outputs). `F` is
//! stepped first, then `G`; both gradients come from the same forward pass.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datahub::{ImageShape, LabelKind, LabelSpace, Labels, Split, SplitDataset};
use crate::error::{Error, Result};
use crate::nets::output_mode::{release_backward, release_batch};
use crate::nets::{Network, Optimizer, OptimizerKind, OutputMode};
use crate::objectives::{
    self, accuracy_binary, accuracy_categorical, categorical_ce_batch, combined_loss,
    reconstruction_loss_batch, weighted_bce_batch, TradeoffWeights,
};
use crate::riskmeter::{reconstruction_risk, GaussianStats};
use crate::scalar::Real;

/// Rows per chunk when running frozen models over a whole split.
pub const EVAL_CHUNK: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub weights: TradeoffWeights,
    /// Channel through which `G` sees `F`'s outputs while training.
    #[serde(default = "default_mode")]
    pub output_mode: OutputMode,
    #[serde(default)]
    pub seed: u64,
}

fn default_mode() -> OutputMode {
    OutputMode::Logits
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            weights: TradeoffWeights::default(),
            output_mode: OutputMode::Logits,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Paper-scale settings: 50 epochs, batch 250, Adam at 1e-3.
    pub fn paper() -> Self {
        Self { epochs: 50, batch_size: 250, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !self.output_mode.is_differentiable() {
            return Err(Error::invalid(format!("cannot train through the {} channel", self.output_mode)));
        }
        self.weights.validate()
    }
}

/// Metrics of one epoch: training losses averaged over batches, then the
/// validation view of the current models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub class_loss: f64,
    pub recon_loss: f64,
    pub val_loss: f64,
    pub acc: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub risk: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for r in &self.records {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let records = r.deserialize().collect::<std::result::Result<Vec<EpochRecord>, _>>().map_err(csv_err)?;
        Ok(Self { records })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Index of the record with the smallest validation loss; ties go to the
/// earliest epoch.
pub fn select_best_checkpoint(history: &[EpochRecord]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in history.iter().enumerate() {
        if !r.val_loss.is_finite() {
            continue;
        }
        if best.is_none_or(|b| r.val_loss < history[b].val_loss) {
            best = Some(i);
        }
    }
    best.ok_or_else(|| Error::Evaluation("history has no finite validation loss".into()))
}

/// Parameters of both models at one epoch.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub epoch: usize,
    pub classifier: Vec<Array2<T>>,
    pub decoder: Vec<Array2<T>>,
    pub val_loss: f64,
    pub metrics: EpochRecord,
}

pub struct TrainOutcome<T> {
    pub classifier: Network<T>,
    pub decoder: Network<T>,
    pub history: History,
    pub best: Checkpoint<T>,
}

/// Test-set (or any split) evaluation of a classifier/decoder pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub dataset: String,
    /// Channel the decoder was fed through.
    pub output_mode: String,
    pub seed: u64,
    pub samples: usize,
    pub acc: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub risk: f64,
}

pub(crate) fn to_real<T: Real>(x: ArrayView2<f32>) -> Array2<T> {
    x.mapv(|v| T::of(v as f64))
}

pub(crate) fn class_loss<T: Real>(logits: &Array2<T>, labels: &Labels, ls: &LabelSpace) -> (f64, Array2<T>) {
    match labels {
        Labels::Categorical(y) => categorical_ce_batch(logits, y),
        Labels::Binary(m) => {
            let ones = vec![1.0; m.ncols()];
            let w = ls.class_weights.as_deref().unwrap_or(&ones);
            weighted_bce_batch(logits, m.view(), w)
        }
    }
}

fn check_pair<T: Real>(f: &Network<T>, g: &Network<T>, ds: &SplitDataset) -> Result<()> {
    if f.out_dim() != g.in_dim() {
        return Err(Error::Construction(format!(
            "classifier emits {} values but decoder takes {}",
            f.out_dim(),
            g.in_dim()
        )));
    }
    if f.in_dim() != ds.shape.len() || g.out_dim() != ds.shape.len() {
        return Err(Error::Construction(format!("models do not match images of shape {}", ds.shape)));
    }
    if f.out_dim() != ds.label_space.n_outputs {
        return Err(Error::Construction(format!(
            "classifier has {} outputs, label space {}",
            f.out_dim(),
            ds.label_space.n_outputs
        )));
    }
    if ds.train.labels.kind() != ds.label_space.kind {
        return Err(Error::Construction("labels do not match the label space".into()));
    }
    Ok(())
}

/// Runs the joint training loop and returns the models restored to the
/// best validation epoch. `stats` (fitted on the training split) is only
/// used for the per-epoch risk column; without it the column is NaN.
pub fn train_joint<T: Real>(
    mut f: Network<T>,
    mut g: Network<T>,
    data: &SplitDataset,
    cfg: &TrainConfig,
    stats: Option<&GaussianStats>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    check_pair(&f, &g, data)?;
    if !cfg.output_mode.compatible_with(data.label_space.kind) {
        return Err(Error::invalid(format!(
            "{} outputs do not fit a {:?} label space",
            cfg.output_mode, data.label_space.kind
        )));
    }
    if data.train.is_empty() || data.valid.is_empty() {
        return Err(Error::invalid("training and validation splits must be non-empty"));
    }
    let w = cfg.weights;
    let mut opt_f = Optimizer::<T>::new(cfg.optimizer, cfg.learning_rate);
    let mut opt_g = Optimizer::<T>::new(cfg.optimizer, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let beta_c = T::of(w.beta_c);
    let beta_r = T::of(w.beta_r);
    let mut history = History::default();
    let mut best: Option<Checkpoint<T>> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut lc_sum, mut lr_sum, mut batches) = (0.0, 0.0, 0usize);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = to_real::<T>(data.train.images.select(Axis(0), idx).view());
            let labels = data.train.labels.select(idx);
            f.zero_grad();
            g.zero_grad();
            let logits = f.forward(x.clone());
            let (lc, dz_c) = class_loss(&logits, &labels, &data.label_space);
            let released = release_batch(&logits, cfg.output_mode);
            let recon = g.forward(released.clone());
            let (lr, mut dx) = reconstruction_loss_batch(&recon, &x, data.shape, &w);
            if !lc.is_finite() || !lr.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi, class_loss: lc, recon_loss: lr });
            }
            let mut dz = dz_c * beta_c;
            if w.beta_r != 0.0 {
                dx *= beta_r;
                let dy = g.backward(&dx);
                dz += &release_backward(&released, &dy, cfg.output_mode);
            }
            f.backward(&dz);
            opt_f.step(f.params_mut());
            opt_g.step(g.params_mut());
            lc_sum += lc;
            lr_sum += lr;
            batches += 1;
        }
        let (val_loss, report) = validate(&f, &g, data, cfg, stats)?;
        let record = EpochRecord {
            epoch,
            class_loss: lc_sum / batches as f64,
            recon_loss: lr_sum / batches as f64,
            val_loss,
            acc: report.acc,
            psnr: report.psnr,
            ssim: report.ssim,
            risk: report.risk,
        };
        log::info!(
            "epoch {epoch}: L_C {:.4} L_R {:.4} val {:.4} acc {:.2} psnr {:.2} ssim {:.3} R {:.3}",
            record.class_loss,
            record.recon_loss,
            record.val_loss,
            record.acc,
            record.psnr,
            record.ssim,
            record.risk
        );
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: batches,
                class_loss: record.class_loss,
                recon_loss: record.recon_loss,
            });
        }
        if best.as_ref().is_none_or(|b| val_loss < b.val_loss) {
            best = Some(Checkpoint {
                epoch,
                classifier: f.flat_params(),
                decoder: g.flat_params(),
                val_loss,
                metrics: record.clone(),
            });
        }
        history.records.push(record);
    }
    let best = best.expect("at least one epoch ran");
    debug_assert_eq!(select_best_checkpoint(&history.records).ok(), Some(best.epoch));
    f.load_flat_params(&best.classifier).map_err(Error::Construction)?;
    g.load_flat_params(&best.decoder).map_err(Error::Construction)?;
    Ok(TrainOutcome { classifier: f, decoder: g, history, best })
}

/// Validation loss in the combined form plus validation metrics.
fn validate<T: Real>(
    f: &Network<T>,
    g: &Network<T>,
    data: &SplitDataset,
    cfg: &TrainConfig,
    stats: Option<&GaussianStats>,
) -> Result<(f64, RiskReport)> {
    let split = &data.valid;
    let x = to_real::<T>(split.images.view());
    let logits = f.infer_chunked(&x, EVAL_CHUNK);
    let released = release_batch(&logits, cfg.output_mode);
    let recon = g.infer_chunked(&released, EVAL_CHUNK);
    let (lc, _) = class_loss(&logits, &split.labels, &data.label_space);
    let mut lr_sum = 0.0;
    let n = split.len();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let r = recon.slice(ndarray::s![start..end, ..]).to_owned();
        let t = x.slice(ndarray::s![start..end, ..]).to_owned();
        let (l, _) = reconstruction_loss_batch(&r, &t, data.shape, &cfg.weights);
        lr_sum += l * (end - start) as f64;
        start = end;
    }
    let val_loss = combined_loss(lc, lr_sum / n as f64, &cfg.weights);
    let thresholds = channel_thresholds(&data.label_space, cfg.output_mode);
    let report = score(
        released.view(),
        recon.view(),
        split,
        &thresholds,
        data.shape,
        stats,
        ReportMeta { dataset: &data.name, output_mode: cfg.output_mode.to_string(), seed: cfg.seed },
    )?;
    Ok((val_loss, report))
}

/// Thresholds for binary accuracy on a given channel: 0 for logits, 0.5
/// for probabilities.
pub fn channel_thresholds(ls: &LabelSpace, mode: OutputMode) -> Vec<f64> {
    match ls.kind {
        LabelKind::Categorical => Vec::new(),
        LabelKind::Binary => match mode {
            OutputMode::Logits => ls.thresholds.clone().unwrap_or_else(|| vec![0.0; ls.n_outputs]),
            _ => vec![0.5; ls.n_outputs],
        },
    }
}

pub struct ReportMeta<'a> {
    pub dataset: &'a str,
    pub output_mode: String,
    pub seed: u64,
}

/// Scores released outputs and reconstructions against a split. Without
/// `stats` the risk is NaN.
pub fn score<T: Real, U: Real>(
    released: ArrayView2<T>,
    recon: ArrayView2<U>,
    split: &Split,
    thresholds: &[f64],
    shape: ImageShape,
    stats: Option<&GaussianStats>,
    meta: ReportMeta<'_>,
) -> Result<RiskReport> {
    let n = split.len();
    if n == 0 {
        return Err(Error::Evaluation("cannot evaluate an empty split".into()));
    }
    if recon.dim() != split.images.dim() {
        return Err(Error::shape(format!("reconstructions {:?} vs images {:?}", recon.dim(), split.images.dim())));
    }
    let acc = match &split.labels {
        Labels::Categorical(y) => accuracy_categorical(released, y),
        Labels::Binary(m) => accuracy_binary(released, m.view(), thresholds),
    };
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut a = vec![0.0; shape.len()];
    let mut b = vec![0.0; shape.len()];
    for i in 0..n {
        for ((av, bv), (&o, &r)) in a.iter_mut().zip(b.iter_mut()).zip(split.images.row(i).iter().zip(recon.row(i))) {
            *av = o as f64;
            *bv = r.as_f64();
        }
        psnr_sum += objectives::psnr(&b, &a);
        ssim_sum += objectives::ssim(&b, &a, shape)?;
    }
    let risk = match stats {
        Some(s) => {
            let recon32 = recon.mapv(|v| v.as_f64() as f32);
            reconstruction_risk(split.images.view(), recon32.view(), s, None)?
        }
        None => f64::NAN,
    };
    Ok(RiskReport {
        dataset: meta.dataset.to_string(),
        output_mode: meta.output_mode,
        seed: meta.seed,
        samples: n,
        acc,
        psnr: psnr_sum / n as f64,
        ssim: ssim_sum / n as f64,
        risk,
    })
}

/// Evaluates a frozen pair on a split: accuracy of `F` through `mode`,
/// and PSNR, SSIM and reconstruction risk of `G` fed that channel.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<T: Real>(
    f: &Network<T>,
    g: &Network<T>,
    split: &Split,
    shape: ImageShape,
    label_space: &LabelSpace,
    mode: OutputMode,
    stats: Option<&GaussianStats>,
    meta: ReportMeta<'_>,
) -> Result<RiskReport> {
    let stats = stats.ok_or_else(|| Error::Evaluation("reconstruction risk needs fitted Gaussian statistics".into()))?;
    if !mode.is_differentiable() {
        return Err(Error::Evaluation(format!("evaluate takes a vector channel, not {mode}")));
    }
    let x = to_real::<T>(split.images.view());
    let logits = f.infer_chunked(&x, EVAL_CHUNK);
    let released = release_batch(&logits, mode);
    let recon = g.infer_chunked(&released, EVAL_CHUNK);
    let thresholds = channel_thresholds(label_space, mode);
    score(released.view(), recon.view(), split, &thresholds, shape, Some(stats), meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, val_loss: f64) -> EpochRecord {
        EpochRecord { epoch, class_loss: 0.0, recon_loss: 0.0, val_loss, acc: 0.0, psnr: 0.0, ssim: 0.0, risk: 0.0 }
    }

    #[test]
    fn best_checkpoint_rules() {
        let mono: Vec<_> = (0..5).map(|e| rec(e, 5.0 - e as f64)).collect();
        assert_eq!(select_best_checkpoint(&mono).unwrap(), 4);
        let dip = vec![rec(0, 3.0), rec(1, 2.0), rec(2, 1.5), rec(3, 0.5), rec(4, 0.9)];
        assert_eq!(select_best_checkpoint(&dip).unwrap(), 3);
        let tie = vec![rec(0, 3.0), rec(1, 2.0), rec(2, 1.0), rec(3, 2.0), rec(4, 1.5), rec(5, 1.0)];
        assert_eq!(select_best_checkpoint(&tie).unwrap(), 2);
        assert!(select_best_checkpoint(&[]).is_err());
    }
}

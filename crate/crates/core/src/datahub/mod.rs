//! Dataset loading, splitting and label-space bookkeeping.
//!
//! Images are stored as rows of an `(n, C·H·W)` matrix in channel-major
//! order with values in `[0, 1]`; [`Split::image_hwc`] gives the `H×W×C`
//! view of a single sample.

pub mod idx;
pub mod synthetic;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{load_tensor, save_tensor, Tensor, TensorData};
use crate::error::{Error, Result};

/// Environment variable naming the dataset root directory.
pub const DATA_ROOT_ENV: &str = "VCBENCH_DATA";

const VALID_FRACTION: f64 = 0.1;
const SYNTHETIC_DEFAULT_CLASSES: usize = 10;
const SYNTHETIC_DEFAULT_TRAIN: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    /// Flattened length `C·H·W`.
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for ImageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Categorical,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub kind: LabelKind,
    pub n_outputs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_weights: Option<Vec<f64>>,
}

impl LabelSpace {
    pub fn categorical(n_outputs: usize) -> Result<Self> {
        if n_outputs == 0 {
            return Err(Error::invalid("label space needs at least one class"));
        }
        Ok(Self { kind: LabelKind::Categorical, n_outputs, thresholds: None, class_weights: None })
    }

    pub fn binary(thresholds: Vec<f64>, class_weights: Vec<f64>) -> Result<Self> {
        let n = thresholds.len();
        if n == 0 || class_weights.len() != n {
            return Err(Error::invalid(format!(
                "binary label space needs matching thresholds and weights ({} vs {})",
                n,
                class_weights.len()
            )));
        }
        if let Some(i) = class_weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::invalid(format!("class weight {i} is not a positive real")));
        }
        Ok(Self {
            kind: LabelKind::Binary,
            n_outputs: n,
            thresholds: Some(thresholds),
            class_weights: Some(class_weights),
        })
    }

    /// Same space with every threshold replaced by `tau` (0 for logits,
    /// 0.5 for probabilities).
    pub fn with_threshold(&self, tau: f64) -> Self {
        let mut s = self.clone();
        if let Some(t) = &mut s.thresholds {
            t.iter_mut().for_each(|v| *v = tau);
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LabelKind::Categorical => {
                if self.thresholds.is_some() || self.class_weights.is_some() {
                    return Err(Error::invalid("categorical label space carries binary fields"));
                }
                Self::categorical(self.n_outputs).map(|_| ())
            }
            LabelKind::Binary => {
                let s = Self::binary(
                    self.thresholds.clone().unwrap_or_default(),
                    self.class_weights.clone().unwrap_or_default(),
                )?;
                if s.n_outputs != self.n_outputs {
                    return Err(Error::invalid("n_outputs disagrees with thresholds"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Categorical(Vec<usize>),
    /// `(n, N)` matrix of 0/1 entries.
    Binary(Array2<u8>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Categorical(v) => v.len(),
            Labels::Binary(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> LabelKind {
        match self {
            Labels::Categorical(_) => LabelKind::Categorical,
            Labels::Binary(_) => LabelKind::Binary,
        }
    }

    pub fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Categorical(v) => Labels::Categorical(idx.iter().map(|&i| v[i]).collect()),
            Labels::Binary(m) => Labels::Binary(m.select(Axis(0), idx)),
        }
    }
}

/// One split: images plus labels, row-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub images: Array2<f32>,
    pub labels: Labels,
}

impl Split {
    pub fn new(images: Array2<f32>, labels: Labels) -> Result<Self> {
        if images.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                images.nrows(),
                labels.len()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Split {
        Split { images: self.images.select(Axis(0), idx), labels: self.labels.select(idx) }
    }

    /// First `n` samples (or all of them).
    pub fn head(&self, n: usize) -> Split {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    /// Sample `i` as an `H×W×C` array.
    pub fn image_hwc(&self, i: usize, shape: ImageShape) -> Array3<f32> {
        let row = self.images.row(i);
        Array3::from_shape_fn((shape.height, shape.width, shape.channels), |(y, x, c)| {
            row[(c * shape.height + y) * shape.width + x]
        })
    }

    /// Keeps only the listed binary attributes, in the given order.
    pub fn with_attributes(&self, attrs: &[usize]) -> Result<Split> {
        match &self.labels {
            Labels::Binary(m) => {
                if let Some(&a) = attrs.iter().find(|&&a| a >= m.ncols()) {
                    return Err(Error::invalid(format!("attribute {a} out of range")));
                }
                Ok(Split { images: self.images.clone(), labels: Labels::Binary(m.select(Axis(1), attrs)) })
            }
            Labels::Categorical(_) => Err(Error::invalid("attribute selection needs binary labels")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub name: String,
    pub shape: ImageShape,
    pub label_space: LabelSpace,
    pub train: Split,
    pub valid: Split,
    pub test: Split,
    pub seed: u64,
}

impl SplitDataset {
    /// Restricts a binary dataset to the given attributes and refits the
    /// class weights on the training split.
    pub fn with_attributes(&self, attrs: &[usize]) -> Result<SplitDataset> {
        let train = self.train.with_attributes(attrs)?;
        let weights = compute_class_weights(&train, attrs.len())?;
        let tau = self.label_space.thresholds.as_ref().and_then(|t| t.first().copied()).unwrap_or(0.0);
        Ok(SplitDataset {
            name: self.name.clone(),
            shape: self.shape,
            label_space: LabelSpace::binary(vec![tau; attrs.len()], weights)?,
            valid: self.valid.with_attributes(attrs)?,
            test: self.test.with_attributes(attrs)?,
            train,
            seed: self.seed,
        })
    }

    /// Per-pixel mean of the training images.
    pub fn train_mean(&self) -> Vec<f64> {
        let n = self.train.len().max(1) as f64;
        let mut acc = vec![0.0f64; self.shape.len()];
        for row in self.train.images.rows() {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v as f64;
            }
        }
        acc.into_iter().map(|a| a / n).collect()
    }
}

/// Dataset root: `$VCBENCH_DATA` if set, otherwise `./data`.
pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}

/// Parsed dataset identifier.
#[derive(Clone, Debug, PartialEq, Eq)]
enum Source {
    Idx { dir: &'static str, classes: usize },
    SyntheticCategorical { classes: usize, train: usize },
    SyntheticBinary { attributes: usize, train: usize },
}

fn parse_name(name: &str) -> Result<Source> {
    let unsupported = || Error::UnsupportedDataset(name.to_string());
    let mut parts = name.split(':');
    let base = parts.next().unwrap_or_default().to_ascii_lowercase();
    let nums: Vec<usize> = parts
        .map(|p| p.parse::<usize>().map_err(|_| unsupported()))
        .collect::<Result<_>>()?;
    let synthetic = |default_n: usize| -> Result<(usize, usize)> {
        if nums.len() > 2 {
            return Err(unsupported());
        }
        let n = nums.first().copied().unwrap_or(default_n);
        let train = nums.get(1).copied().unwrap_or(SYNTHETIC_DEFAULT_TRAIN);
        if n == 0 || train < 10 {
            return Err(unsupported());
        }
        Ok((n, train))
    };
    match base.as_str() {
        "mnist" | "fmnist" if !nums.is_empty() => Err(unsupported()),
        "mnist" => Ok(Source::Idx { dir: "mnist", classes: 10 }),
        "fmnist" | "fashion-mnist" => Ok(Source::Idx { dir: "fmnist", classes: 10 }),
        "synthetic-categorical" => {
            let (classes, train) = synthetic(SYNTHETIC_DEFAULT_CLASSES)?;
            Ok(Source::SyntheticCategorical { classes, train })
        }
        "synthetic-binary" => {
            let (attributes, train) = synthetic(4)?;
            Ok(Source::SyntheticBinary { attributes, train })
        }
        _ => Err(unsupported()),
    }
}

/// Loads, normalises, resizes and splits a dataset.
///
/// Supported names: `mnist`, `fmnist` (IDX files under the dataset root),
/// `synthetic-categorical[:N[:TRAIN]]` and `synthetic-binary[:N[:TRAIN]]`.
/// Synthetic sets draw `TRAIN` training and `TRAIN/4` test images.
pub fn load_dataset(name: &str, resize_to: (usize, usize), seed: u64) -> Result<SplitDataset> {
    load_dataset_from(name, resize_to, seed, &data_root())
}

pub fn load_dataset_from(
    name: &str,
    resize_to: (usize, usize),
    seed: u64,
    root: &Path,
) -> Result<SplitDataset> {
    let source = parse_name(name)?;
    let (h, w) = resize_to;
    if h == 0 || w == 0 {
        return Err(Error::invalid("resize target must be non-empty"));
    }
    let (shape, train_full, test, label_space) = match source {
        Source::Idx { dir, classes } => {
            let dir = root.join(dir);
            let (tr_img, tr_lab, shape) = read_idx_pair(&dir, "train", classes, (h, w))?;
            let (te_img, te_lab, _) = read_idx_pair(&dir, "t10k", classes, (h, w))?;
            let train = Split::new(tr_img, Labels::Categorical(tr_lab))?;
            let test = Split::new(te_img, Labels::Categorical(te_lab))?;
            (shape, train, test, LabelSpace::categorical(classes)?)
        }
        Source::SyntheticCategorical { classes, train } => {
            let shape = ImageShape::new(h, w, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, la) = synthetic::categorical(train, classes, shape, &mut rng);
            let (b, lb) = synthetic::categorical(train / 4, classes, shape, &mut rng);
            let tr = Split::new(a, Labels::Categorical(la))?;
            let te = Split::new(b, Labels::Categorical(lb))?;
            (shape, tr, te, LabelSpace::categorical(classes)?)
        }
        Source::SyntheticBinary { attributes, train } => {
            let shape = ImageShape::new(h, w, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, la) = synthetic::binary(train, attributes, shape, &mut rng);
            let (b, lb) = synthetic::binary(train / 4, attributes, shape, &mut rng);
            let tr = Split::new(a, Labels::Binary(la))?;
            let te = Split::new(b, Labels::Binary(lb))?;
            // weights are fitted on the final training split below
            let ls = LabelSpace::binary(vec![0.0; attributes], vec![1.0; attributes])?;
            (shape, tr, te, ls)
        }
    };
    let (train, valid) = split_validation(&train_full, seed);
    let label_space = match label_space.kind {
        LabelKind::Binary => LabelSpace::binary(
            vec![0.0; label_space.n_outputs],
            compute_class_weights(&train, label_space.n_outputs)?,
        )?,
        LabelKind::Categorical => label_space,
    };
    Ok(SplitDataset { name: name.to_string(), shape, label_space, train, valid, test, seed })
}

/// Uniformly random 10% validation split, no stratification.
fn split_validation(full: &Split, seed: u64) -> (Split, Split) {
    let n = full.len();
    let n_valid = (n as f64 * VALID_FRACTION).round() as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    // offset keeps this stream distinct from the synthetic generator's
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5b1d);
    perm.shuffle(&mut rng);
    let mut valid_idx = perm[..n_valid].to_vec();
    let mut train_idx = perm[n_valid..].to_vec();
    valid_idx.sort_unstable();
    train_idx.sort_unstable();
    (full.select(&train_idx), full.select(&valid_idx))
}

fn read_idx_pair(
    dir: &Path,
    prefix: &str,
    classes: usize,
    (h, w): (usize, usize),
) -> Result<(Array2<f32>, Vec<usize>, ImageShape)> {
    let img_path = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let lab_path = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    let images = idx::read_idx(&img_path)?;
    let labels = idx::read_idx(&lab_path)?;
    let bad = |path: &Path, reason: String| Error::Ingestion { path: path.to_path_buf(), reason };
    if images.dims.len() != 3 {
        return Err(bad(&img_path, format!("expected 3 image dims, got {:?}", images.dims)));
    }
    if labels.dims.len() != 1 || labels.dims[0] != images.dims[0] {
        return Err(bad(&lab_path, "label count does not match image count".into()));
    }
    if let Some(&l) = labels.data.iter().find(|&&l| l as usize >= classes) {
        return Err(bad(&lab_path, format!("label {l} outside 0..{classes}")));
    }
    let (n, sh, sw) = (images.dims[0], images.dims[1], images.dims[2]);
    let mut out = Array2::zeros((n, h * w));
    let mut src = vec![0f32; sh * sw];
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        for (s, &b) in src.iter_mut().zip(&images.data[i * sh * sw..(i + 1) * sh * sw]) {
            *s = b as f32 / 255.0;
        }
        resize_bilinear(&src, 1, (sh, sw), (h, w), row.as_slice_mut().unwrap());
    }
    let labels = labels.data.iter().map(|&l| l as usize).collect();
    Ok((out, labels, ImageShape::new(h, w, 1)))
}

/// Bilinear resampling of channel-major planes with half-pixel centres
/// and edge clamping, followed by a clamp to `[0, 1]`.
pub fn resize_bilinear(src: &[f32], channels: usize, from: (usize, usize), to: (usize, usize), dst: &mut [f32]) {
    let (sh, sw) = from;
    let (dh, dw) = to;
    let coord = |d: usize, sn: usize, dn: usize| {
        let s = ((d as f64 + 0.5) * sn as f64 / dn as f64 - 0.5).clamp(0.0, (sn - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(sn - 1);
        (i0, i1, (s - i0 as f64) as f32)
    };
    let xs: Vec<_> = (0..dw).map(|x| coord(x, sw, dw)).collect();
    for c in 0..channels {
        let plane = &src[c * sh * sw..(c + 1) * sh * sw];
        for y in 0..dh {
            let (y0, y1, fy) = coord(y, sh, dh);
            for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = plane[y0 * sw + x0] * (1.0 - fx) + plane[y0 * sw + x1] * fx;
                let bot = plane[y1 * sw + x0] * (1.0 - fx) + plane[y1 * sw + x1] * fx;
                dst[(c * dh + y) * dw + x] = (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0);
            }
        }
    }
}

/// `η_n = #zeros_n / #ones_n` over the training labels.
pub fn compute_class_weights(train: &Split, n_attributes: usize) -> Result<Vec<f64>> {
    let m = match &train.labels {
        Labels::Binary(m) => m,
        Labels::Categorical(_) => return Err(Error::invalid("class weights need binary labels")),
    };
    if m.ncols() != n_attributes {
        return Err(Error::shape(format!("labels have {} attributes, expected {n_attributes}", m.ncols())));
    }
    (0..n_attributes)
        .map(|j| {
            let ones = m.column(j).iter().filter(|&&v| v != 0).count();
            let zeros = m.nrows() - ones;
            if ones == 0 {
                Err(Error::DegenerateAttribute { index: j })
            } else {
                Ok(zeros as f64 / ones as f64)
            }
        })
        .collect()
}

/// Positive rate of every binary attribute.
pub fn positive_rates(train: &Split) -> Result<Vec<f64>> {
    match &train.labels {
        Labels::Binary(m) => {
            let n = m.nrows().max(1) as f64;
            Ok(m.columns().into_iter().map(|c| c.iter().filter(|&&v| v != 0).count() as f64 / n).collect())
        }
        Labels::Categorical(_) => Err(Error::invalid("positive rates need binary labels")),
    }
}

/// Indices of the `k` rates closest to 0.5 (ties to the lower index),
/// returned in ascending order.
pub fn balanced_indices(rates: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > rates.len() {
        return Err(Error::invalid(format!("asked for {k} attributes out of {}", rates.len())));
    }
    let mut order: Vec<usize> = (0..rates.len()).collect();
    order.sort_by(|&a, &b| {
        (rates[a] - 0.5).abs().total_cmp(&(rates[b] - 0.5).abs()).then(a.cmp(&b))
    });
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn select_balanced_attributes(train: &Split, k: usize) -> Result<Vec<usize>> {
    balanced_indices(&positive_rates(train)?, k)
}

/// Writes the normalised splits to `dir` as tensor files plus a JSON
/// description, so later runs can skip decoding and resizing.
pub fn save_cache(ds: &SplitDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (tag, split) in [("train", &ds.train), ("valid", &ds.valid), ("test", &ds.test)] {
        let img = Tensor::f32(split.images.shape().to_vec(), split.images.iter().copied().collect());
        save_tensor(&dir.join(format!("{tag}-images.vctn")), &img)?;
        let lab = match &split.labels {
            Labels::Categorical(v) => Tensor {
                shape: vec![v.len()],
                data: TensorData::U8(v.iter().map(|&l| l as u8).collect()),
            },
            Labels::Binary(m) => Tensor { shape: m.shape().to_vec(), data: TensorData::U8(m.iter().copied().collect()) },
        };
        save_tensor(&dir.join(format!("{tag}-labels.vctn")), &lab)?;
    }
    let meta = serde_json::json!({
        "name": ds.name,
        "shape": ds.shape,
        "label_space": ds.label_space,
        "seed": ds.seed,
    });
    fs::write(dir.join("dataset.json"), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

pub fn load_cache(dir: &Path) -> Result<SplitDataset> {
    let meta_path = dir.join("dataset.json");
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(&meta_path).map_err(|e| {
        Error::Ingestion { path: meta_path.clone(), reason: e.to_string() }
    })?)?;
    let shape: ImageShape = serde_json::from_value(meta["shape"].clone())?;
    let label_space: LabelSpace = serde_json::from_value(meta["label_space"].clone())?;
    let mut splits = Vec::new();
    for tag in ["train", "valid", "test"] {
        let img = load_tensor(&dir.join(format!("{tag}-images.vctn")))?;
        let images = match (img.data, img.shape.as_slice()) {
            (TensorData::F32(v), &[n, d]) if d == shape.len() => Array2::from_shape_vec((n, d), v)
                .map_err(|e| Error::Format(e.to_string()))?,
            _ => return Err(Error::Format(format!("{tag} images have the wrong layout"))),
        };
        let lab = load_tensor(&dir.join(format!("{tag}-labels.vctn")))?;
        let labels = match (lab.data, lab.shape.as_slice(), label_space.kind) {
            (TensorData::U8(v), &[_], LabelKind::Categorical) => {
                Labels::Categorical(v.into_iter().map(usize::from).collect())
            }
            (TensorData::U8(v), &[n, k], LabelKind::Binary) => Labels::Binary(
                Array2::from_shape_vec((n, k), v).map_err(|e| Error::Format(e.to_string()))?,
            ),
            _ => return Err(Error::Format(format!("{tag} labels have the wrong layout"))),
        };
        splits.push(Split::new(images, labels)?);
    }
    let test = splits.pop().unwrap();
    let valid = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(SplitDataset {
        name: meta["name"].as_str().unwrap_or_default().to_string(),
        shape,
        label_space,
        train,
        valid,
        test,
        seed: meta["seed"].as_u64().unwrap_or_default(),
    })
}

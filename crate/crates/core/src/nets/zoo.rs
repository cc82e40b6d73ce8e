//! Classifier and decoder architectures.
//!
//! Every decoder ends in a zero-initialised spatial layer, a [`PixelBias`]
//! and a logistic unit. An untrained decoder therefore emits the same image
//! for every input; [`set_decoder_prior`] makes that image the training mean.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::im2col::ConvGeom;
use super::layers::{
    BatchNorm2d, Conv2d, ConvTranspose2d, Dense, GlobalAvgPool, PixelBias, Relu, ResidualBlock,
    Sigmoid, Spatial,
};
use super::network::{Layer, Network};
use crate::datahub::ImageShape;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_WRN_DEPTH: usize = 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Wideresnet,
    Smallcnn,
    Mlp,
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wideresnet" | "wrn" => Ok(Family::Wideresnet),
            "smallcnn" => Ok(Family::Smallcnn),
            "mlp" => Ok(Family::Mlp),
            _ => Err(format!("unknown model family `{s}`")),
        }
    }
}

fn default_depth() -> usize {
    DEFAULT_WRN_DEPTH
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub family: Family,
    pub width: usize,
    /// Only used by the wide residual family.
    #[serde(default = "default_depth")]
    pub depth: usize,
    pub n_outputs: usize,
    pub input_shape: ImageShape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub family: Family,
    pub width: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    pub n_inputs: usize,
    pub output_shape: ImageShape,
}

impl ClassifierSpec {
    pub fn new(family: Family, width: usize, n_outputs: usize, input_shape: ImageShape) -> Self {
        Self { family, width, depth: DEFAULT_WRN_DEPTH, n_outputs, input_shape }
    }

    /// The decoder that inverts this classifier's outputs.
    pub fn mirror(&self) -> DecoderSpec {
        DecoderSpec {
            family: self.family,
            width: self.width,
            depth: self.depth,
            n_inputs: self.n_outputs,
            output_shape: self.input_shape,
        }
    }
}

fn check_common(family: Family, width: usize, depth: usize, n: usize, shape: ImageShape) -> Result<()> {
    if n == 0 {
        return Err(Error::Construction("need at least one output".into()));
    }
    if width == 0 {
        return Err(Error::Construction("width must be positive".into()));
    }
    if shape.height == 0 || shape.width == 0 || shape.channels == 0 {
        return Err(Error::Construction(format!("empty image shape {shape}")));
    }
    match family {
        Family::Mlp => Ok(()),
        Family::Smallcnn | Family::Wideresnet => {
            if shape.height % 4 != 0 || shape.width % 4 != 0 {
                return Err(Error::Construction(format!(
                    "{family:?} downsamples twice by 2; {shape} is not divisible by 4"
                )));
            }
            if family == Family::Wideresnet && (depth < 10 || (depth - 4) % 6 != 0) {
                return Err(Error::Construction(format!(
                    "wide residual depth must be 6n+4 with n >= 1, got {depth}"
                )));
            }
            Ok(())
        }
    }
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// He-normal matrix with the given fan-in.
    fn he<T: Real>(&mut self, rows: usize, cols: usize, fan_in: usize) -> Array2<T> {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
        Array2::from_shape_fn((rows, cols), |_| T::of(normal.sample(&mut self.rng)))
    }

    fn dense<T: Real>(&mut self, fan_in: usize, fan_out: usize) -> Layer<T> {
        Layer::Dense(Dense::new(self.he(fan_in, fan_out, fan_in)))
    }

    fn conv<T: Real>(&mut self, cin: usize, cout: usize, hw: (usize, usize), k: usize, s: usize, bias: bool) -> Conv2d<T> {
        let g = ConvGeom::new(cin, hw.0, hw.1, k, s, k / 2).expect("checked geometry");
        Conv2d::new(g, self.he(cout, cin * k * k, cin * k * k), bias)
    }

    /// Transposed convolution producing `cout × out_hw` from an input grid
    /// `s` times smaller.
    fn convt<T: Real>(
        &mut self,
        cin: usize,
        cout: usize,
        out_hw: (usize, usize),
        k: usize,
        s: usize,
        bias: bool,
    ) -> ConvTranspose2d<T> {
        let g = ConvGeom::new(cout, out_hw.0, out_hw.1, k, s, k / 2).expect("checked geometry");
        let fan_in = (cin * k * k / (s * s)).max(1);
        ConvTranspose2d::new(g, self.he(cin, cout * k * k, fan_in), bias)
    }
}

fn relu<T: Real>() -> Layer<T> {
    Layer::Relu(Relu::default())
}

fn decoder_tail<T: Real>(layers: &mut Vec<Layer<T>>, dim: usize) {
    layers.push(Layer::PixelBias(PixelBias::new(dim)));
    layers.push(Layer::Sigmoid(Sigmoid::default()));
}

/// Builds the classifier `F`: image (flattened `c,h,w`) to `N` raw logits.
pub fn build_classifier<T: Real>(spec: &ClassifierSpec, seed: u64) -> Result<Network<T>> {
    let sh = spec.input_shape;
    check_common(spec.family, spec.width, spec.depth, spec.n_outputs, sh)?;
    let mut init = Init::new(seed);
    let (c, h, w, k, n) = (sh.channels, sh.height, sh.width, spec.width, spec.n_outputs);
    let layers = match spec.family {
        Family::Mlp => {
            let hidden = 128 * k;
            vec![
                init.dense(sh.len(), hidden),
                relu(),
                init.dense(hidden, hidden),
                relu(),
                init.dense(hidden, n),
            ]
        }
        Family::Smallcnn => {
            let (c1, c2, hid) = (8 * k, 16 * k, 64 * k);
            vec![
                Layer::Conv(init.conv(c, c1, (h, w), 3, 2, true)),
                relu(),
                Layer::Conv(init.conv(c1, c2, (h / 2, w / 2), 3, 2, true)),
                relu(),
                init.dense(c2 * (h / 4) * (w / 4), hid),
                relu(),
                init.dense(hid, n),
            ]
        }
        Family::Wideresnet => {
            let blocks = (spec.depth - 4) / 6;
            let mut layers = vec![Layer::Conv(init.conv(c, 16, (h, w), 3, 1, false))];
            let mut cin = 16;
            let (mut hh, mut ww) = (h, w);
            for (gi, cout) in [16 * k, 32 * k, 64 * k].into_iter().enumerate() {
                for b in 0..blocks {
                    let stride = if gi > 0 && b == 0 { 2 } else { 1 };
                    let (oh, ow) = (hh / stride, ww / stride);
                    let op1 = Spatial::Conv(init.conv(cin, cout, (hh, ww), 3, stride, false));
                    let op2 = Spatial::Conv(init.conv(cout, cout, (oh, ow), 3, 1, false));
                    let shortcut = (cin != cout || stride != 1)
                        .then(|| Spatial::Conv(init.conv(cin, cout, (hh, ww), 1, stride, false)));
                    layers.push(Layer::Residual(Box::new(ResidualBlock::new(
                        BatchNorm2d::new(cin, hh * ww),
                        op1,
                        BatchNorm2d::new(cout, oh * ow),
                        op2,
                        shortcut,
                    ))));
                    cin = cout;
                    (hh, ww) = (oh, ow);
                }
            }
            layers.push(Layer::BatchNorm(BatchNorm2d::new(cin, hh * ww)));
            layers.push(relu());
            layers.push(Layer::GlobalAvgPool(GlobalAvgPool { c: cin, hw: hh * ww }));
            layers.push(init.dense(cin, n));
            layers
        }
    };
    Ok(Network::new(layers, sh.len(), n))
}

/// Builds the decoder `G`: `N` released outputs to an image in `(0,1)`.
pub fn build_decoder<T: Real>(spec: &DecoderSpec, seed: u64) -> Result<Network<T>> {
    let sh = spec.output_shape;
    check_common(spec.family, spec.width, spec.depth, spec.n_inputs, sh)?;
    let mut init = Init::new(seed);
    let (c, h, w, k, n) = (sh.channels, sh.height, sh.width, spec.width, spec.n_inputs);
    let d = sh.len();
    let mut layers = match spec.family {
        Family::Mlp => {
            let hidden = 128 * k;
            vec![
                init.dense(n, hidden),
                relu(),
                init.dense(hidden, hidden),
                relu(),
                Layer::Dense(Dense::new(Array2::zeros((hidden, d)))),
            ]
        }
        Family::Smallcnn => {
            let (c1, c2, hid) = (8 * k, 16 * k, 64 * k);
            let mut last = init.convt::<T>(c1, c, (h, w), 3, 2, true);
            last.weight.value.fill(T::zero());
            vec![
                init.dense(n, hid),
                relu(),
                init.dense(hid, c2 * (h / 4) * (w / 4)),
                relu(),
                Layer::ConvT(init.convt(c2, c1, (h / 2, w / 2), 3, 2, true)),
                relu(),
                Layer::ConvT(last),
            ]
        }
        Family::Wideresnet => {
            let blocks = (spec.depth - 4) / 6;
            let (mut hh, mut ww) = (h / 4, w / 4);
            let mut cin = 64 * k;
            let mut layers = vec![init.dense(n, cin * hh * ww)];
            for (gi, cout) in [64 * k, 32 * k, 16 * k].into_iter().enumerate() {
                for b in 0..blocks {
                    let stride = if gi > 0 && b == 0 { 2 } else { 1 };
                    let (oh, ow) = (hh * stride, ww * stride);
                    let op1 = Spatial::ConvT(init.convt(cin, cout, (oh, ow), 3, stride, false));
                    let op2 = Spatial::ConvT(init.convt(cout, cout, (oh, ow), 3, 1, false));
                    let shortcut = (cin != cout || stride != 1)
                        .then(|| Spatial::ConvT(init.convt(cin, cout, (oh, ow), 1, stride, false)));
                    layers.push(Layer::Residual(Box::new(ResidualBlock::new(
                        BatchNorm2d::new(cin, hh * ww),
                        op1,
                        BatchNorm2d::new(cout, oh * ow),
                        op2,
                        shortcut,
                    ))));
                    cin = cout;
                    (hh, ww) = (oh, ow);
                }
            }
            let mut last = init.convt::<T>(cin, c, (hh, ww), 3, 1, true);
            last.weight.value.fill(T::zero());
            layers.push(Layer::BatchNorm(BatchNorm2d::new(cin, hh * ww)));
            layers.push(relu());
            layers.push(Layer::ConvT(last));
            layers
        }
    };
    decoder_tail(&mut layers, d);
    Ok(Network::new(layers, n, d))
}

/// Points the decoder's pixel bias at `logit(mean)`, so that with the
/// zero-initialised last layer it reproduces `mean` exactly.
pub fn set_decoder_prior<T: Real>(decoder: &mut Network<T>, mean: &[f64]) -> Result<()> {
    let bias = decoder
        .layers_mut()
        .iter_mut()
        .rev()
        .find_map(|l| match l {
            Layer::PixelBias(p) => Some(p),
            _ => None,
        })
        .ok_or_else(|| Error::Construction("decoder has no pixel bias".into()))?;
    if bias.bias.value.len() != mean.len() {
        return Err(Error::shape(format!(
            "prior has {} values, decoder emits {}",
            mean.len(),
            bias.bias.value.len()
        )));
    }
    for (b, &m) in bias.bias.value.iter_mut().zip(mean) {
        let p = m.clamp(1e-3, 1.0 - 1e-3);
        *b = T::of((p / (1.0 - p)).ln());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(h: usize, w: usize, c: usize) -> ImageShape {
        ImageShape { height: h, width: w, channels: c }
    }

    #[test]
    fn wideresnet_width5_is_about_nine_million() {
        let spec = ClassifierSpec::new(Family::Wideresnet, 5, 200, shape(32, 32, 3));
        let f = build_classifier::<f32>(&spec, 0).unwrap();
        let p = f.param_count() as f64;
        assert!((p - 9.0e6).abs() <= 0.15 * 9.0e6, "{p}");
    }

    #[test]
    fn output_shapes() {
        for family in [Family::Mlp, Family::Smallcnn, Family::Wideresnet] {
            let mut spec = ClassifierSpec::new(family, 1, 7, shape(8, 8, 2));
            spec.depth = 10;
            let f = build_classifier::<f64>(&spec, 1).unwrap();
            let y = f.infer(&Array2::from_elem((3, 128), 0.5));
            assert_eq!(y.dim(), (3, 7));
            let g = build_decoder::<f64>(&spec.mirror(), 2).unwrap();
            let x = g.infer(&Array2::from_elem((3, 7), 0.3));
            assert_eq!(x.dim(), (3, 128));
        }
    }

    #[test]
    fn bad_shapes_are_rejected() {
        let spec = ClassifierSpec::new(Family::Smallcnn, 1, 3, shape(10, 10, 1));
        assert!(matches!(build_classifier::<f32>(&spec, 0), Err(Error::Construction(_))));
        let mut spec = ClassifierSpec::new(Family::Wideresnet, 1, 3, shape(8, 8, 1));
        spec.depth = 12;
        assert!(build_classifier::<f32>(&spec, 0).is_err());
        let spec = ClassifierSpec::new(Family::Mlp, 1, 0, shape(8, 8, 1));
        assert!(build_classifier::<f32>(&spec, 0).is_err());
    }

    #[test]
    fn untrained_decoder_emits_prior() {
        let spec = ClassifierSpec::new(Family::Smallcnn, 1, 4, shape(8, 8, 1));
        let mut g = build_decoder::<f64>(&spec.mirror(), 0).unwrap();
        let mean: Vec<f64> = (0..64).map(|i| i as f64 / 64.0).collect();
        set_decoder_prior(&mut g, &mean).unwrap();
        let x = g.infer(&Array2::from_shape_fn((2, 4), |(i, j)| (i * 4 + j) as f64));
        for (i, &v) in x.row(1).iter().enumerate() {
            assert!((v - mean[i].clamp(1e-3, 1.0 - 1e-3)).abs() < 1e-12);
        }
    }
}

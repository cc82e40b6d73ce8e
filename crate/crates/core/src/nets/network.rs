use ndarray::{s, Array2};
use sha2::{Digest, Sha256};

use super::layers::{
    BatchNorm2d, Conv2d, ConvTranspose2d, Dense, GlobalAvgPool, Param, PixelBias, Relu,
    ResidualBlock, Sigmoid,
};
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Dense(Dense<T>),
    Conv(Conv2d<T>),
    ConvT(ConvTranspose2d<T>),
    Relu(Relu<T>),
    Sigmoid(Sigmoid<T>),
    PixelBias(PixelBias<T>),
    BatchNorm(BatchNorm2d<T>),
    GlobalAvgPool(GlobalAvgPool),
    Residual(Box<ResidualBlock<T>>),
}

impl<T: Real> Layer<T> {
    fn infer(&self, x: &Array2<T>) -> Array2<T> {
        match self {
            Layer::Dense(l) => l.infer(x),
            Layer::Conv(l) => l.infer(x),
            Layer::ConvT(l) => l.infer(x),
            Layer::Relu(l) => l.infer(x),
            Layer::Sigmoid(l) => l.infer(x),
            Layer::PixelBias(l) => l.infer(x),
            Layer::BatchNorm(l) => l.infer(x),
            Layer::GlobalAvgPool(l) => l.infer(x),
            Layer::Residual(l) => l.infer(x),
        }
    }

    fn forward(&mut self, x: Array2<T>) -> Array2<T> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Conv(l) => l.forward(x),
            Layer::ConvT(l) => l.forward(x),
            Layer::Relu(l) => l.forward(x),
            Layer::Sigmoid(l) => l.forward(x),
            Layer::PixelBias(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x),
            Layer::GlobalAvgPool(l) => l.infer(&x),
            Layer::Residual(l) => l.forward(x),
        }
    }

    fn backward(&mut self, dy: &Array2<T>) -> Array2<T> {
        match self {
            Layer::Dense(l) => l.backward(dy),
            Layer::Conv(l) => l.backward(dy),
            Layer::ConvT(l) => l.backward(dy),
            Layer::Relu(l) => l.backward(dy),
            Layer::Sigmoid(l) => l.backward(dy),
            Layer::PixelBias(l) => l.backward(dy),
            Layer::BatchNorm(l) => l.backward(dy),
            Layer::GlobalAvgPool(l) => l.backward(dy),
            Layer::Residual(l) => l.backward(dy),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Dense(l) => l.params_mut(),
            Layer::Conv(l) => l.params_mut(),
            Layer::ConvT(l) => l.params_mut(),
            Layer::PixelBias(l) => vec![&mut l.bias],
            Layer::BatchNorm(l) => l.params_mut(),
            Layer::Residual(l) => l.params_mut(),
            Layer::Relu(_) | Layer::Sigmoid(_) | Layer::GlobalAvgPool(_) => Vec::new(),
        }
    }

    fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Dense(l) => l.params(),
            Layer::Conv(l) => l.params(),
            Layer::ConvT(l) => l.params(),
            Layer::PixelBias(l) => vec![&l.bias],
            Layer::BatchNorm(l) => l.params(),
            Layer::Residual(l) => l.params(),
            Layer::Relu(_) | Layer::Sigmoid(_) | Layer::GlobalAvgPool(_) => Vec::new(),
        }
    }
}

/// A feed-forward stack operating on `(batch, features)` matrices. Image
/// planes are flattened channel-major (`c, h, w`).
///
/// `forward` runs in training mode and caches what `backward` needs;
/// `infer` is the read-only evaluation path (batch-norm uses running
/// statistics) and is safe to call from several threads.
#[derive(Clone, Debug)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
    in_dim: usize,
    out_dim: usize,
}

impl<T: Real> Network<T> {
    pub fn new(layers: Vec<Layer<T>>, in_dim: usize, out_dim: usize) -> Self {
        Self { layers, in_dim, out_dim }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn forward(&mut self, x: Array2<T>) -> Array2<T> {
        assert_eq!(x.ncols(), self.in_dim, "network input width");
        let x = x.as_standard_layout().into_owned();
        self.layers.iter_mut().fold(x, |h, l| l.forward(h))
    }

    pub fn backward(&mut self, dy: &Array2<T>) -> Array2<T> {
        let mut g = dy.as_standard_layout().into_owned();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g);
        }
        g
    }

    pub fn infer(&self, x: &Array2<T>) -> Array2<T> {
        assert_eq!(x.ncols(), self.in_dim, "network input width");
        let x = x.as_standard_layout().into_owned();
        self.layers.iter().fold(x, |h, l| l.infer(&h))
    }

    /// Evaluation-mode forward pass in chunks of `chunk` rows.
    pub fn infer_chunked(&self, x: &Array2<T>, chunk: usize) -> Array2<T> {
        let chunk = chunk.max(1);
        let mut out = Array2::zeros((x.nrows(), self.out_dim));
        let mut start = 0;
        while start < x.nrows() {
            let end = (start + chunk).min(x.nrows());
            let y = self.infer(&x.slice(s![start..end, ..]).to_owned());
            out.slice_mut(s![start..end, ..]).assign(&y);
            start = end;
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params().iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// SHA-256 over every parameter and buffer, in order. Identical
    /// fingerprints mean bit-identical models.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in self.params() {
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.iter() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Flattened parameter values, in `params()` order.
    pub fn flat_params(&self) -> Vec<Array2<T>> {
        self.params().iter().map(|p| p.value.clone()).collect()
    }

    pub fn load_flat_params(&mut self, values: &[Array2<T>]) -> Result<(), String> {
        let mut params = self.params_mut();
        if params.len() != values.len() {
            return Err(format!("expected {} tensors, got {}", params.len(), values.len()));
        }
        for (i, (p, v)) in params.iter_mut().zip(values).enumerate() {
            if p.value.shape() != v.shape() {
                return Err(format!(
                    "tensor {i}: expected shape {:?}, got {:?}",
                    p.value.shape(),
                    v.shape()
                ));
            }
            p.value.assign(v);
        }
        Ok(())
    }
}

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, Axis};

use super::im2col::{col2im, im2col, ConvGeom};
use crate::scalar::Real;

/// A parameter tensor with its accumulated gradient. Non-trainable entries
/// (batch-norm running statistics) travel with checkpoints but are skipped
/// by optimizers.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Array2<T>,
    pub grad: Array2<T>,
    pub trainable: bool,
}

impl<T: Real> Param<T> {
    pub fn new(value: Array2<T>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self { value, grad, trainable: true }
    }

    pub fn buffer(value: Array2<T>) -> Self {
        Self { trainable: false, ..Self::new(value) }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

fn row_view<T>(x: &Array2<T>, b: usize, rows: usize, cols: usize) -> ArrayView2<'_, T> {
    let s = x.row(b).to_slice().expect("standard layout batch");
    ArrayView2::from_shape((rows, cols), s).expect("row reshapes")
}

fn row_view_mut<T>(x: &mut Array2<T>, b: usize, rows: usize, cols: usize) -> ArrayViewMut2<'_, T> {
    let s = x.row_mut(b).into_slice().expect("standard layout batch");
    ArrayViewMut2::from_shape((rows, cols), s).expect("row reshapes")
}

/// Fully connected layer, `y = x·W + b` with `W` stored `in × out`.
#[derive(Clone, Debug)]
pub struct Dense<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Array2<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new(weight: Array2<T>) -> Self {
        let out = weight.ncols();
        Self { weight: Param::new(weight), bias: Param::new(Array2::zeros((1, out))), input: None }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn infer(&self, x: &Array2<T>) -> Array2<T> {
        let mut y = x.dot(&self.weight.value);
        y += &self.bias.value;
        y
    }

    pub fn forward(&mut self, x: Array2<T>) -> Array2<T> {
        let y = self.infer(&x);
        self.input = Some(x);
        y
    }

    pub fn backward(&mut self, dy: &Array2<T>) -> Array2<T> {
        let x = self.input.as_ref().expect("Dense::backward before forward");
        general_mat_mul(T::one(), &x.t(), dy, T::one(), &mut self.weight.grad);
        self.bias.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.weight.value.t())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }
}

/// 2-D convolution over `c × h × w` planes flattened channel-major.
/// Weight is `cout × (cin·k·k)`.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub geom: ConvGeom,
    pub cout: usize,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    cols: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(geom: ConvGeom, weight: Array2<T>, with_bias: bool) -> Self {
        let cout = weight.nrows();
        assert_eq!(weight.ncols(), geom.patch_len());
        let bias = with_bias.then(|| Param::new(Array2::zeros((1, cout))));
        Self { geom, cout, weight: Param::new(weight), bias, cols: Vec::new() }
    }

    pub fn in_dim(&self) -> usize {
        self.geom.in_len()
    }

    pub fn out_dim(&self) -> usize {
        self.cout * self.geom.out_len()
    }

    fn run(&self, x: &Array2<T>, mut cache: Option<&mut Vec<T>>) -> Array2<T> {
        let g = &self.geom;
        let (pl, ol) = (g.patch_len(), g.out_len());
        let batch = x.nrows();
        let mut y = Array2::zeros((batch, self.cout * ol));
        let mut scratch = Vec::new();
        if let Some(c) = cache.as_deref_mut() {
            c.clear();
            c.resize(batch * pl * ol, T::zero());
        } else {
            scratch.resize(pl * ol, T::zero());
        }
        for b in 0..batch {
            let cols: &mut [T] = match cache.as_deref_mut() {
                Some(c) => &mut c[b * pl * ol..(b + 1) * pl * ol],
                None => &mut scratch,
            };
            im2col(x.row(b).to_slice().expect("standard layout"), g, cols);
            let colv = ArrayView2::from_shape((pl, ol), &*cols).unwrap();
            let mut yv = row_view_mut(&mut y, b, self.cout, ol);
            general_mat_mul(T::one(), &self.weight.value, &colv, T::zero(), &mut yv);
            if let Some(bias) = &self.bias {
                for (mut r, &bv) in yv.rows_mut().into_iter().zip(bias.value.iter()) {
                    r.mapv_inplace(|v| v + bv);
                }
            }
        }
        y
    }

    pub fn infer(&self, x: &Array2<T>) -> Array2<T> {
        self.run(x, None)
    }

    pub fn forward(&mut self, x: Array2<T>) -> Array2<T> {
        let mut cols = std::mem::take(&mut self.cols);
        let y = self.run(&x, Some(&mut cols));
        self.cols = cols;
        y
    }

    pub fn backward(&mut self, dy: &Array2<T>) -> Array2<T> {
        let g = self.geom;
        let (pl, ol) = (g.patch_len(), g.out_len());
        let batch = dy.nrows();
        assert_eq!(self.cols.len(), batch * pl * ol, "Conv2d::backward before forward");
        let mut dx = Array2::zeros((batch, g.in_len()));
        let mut dcols = Array2::zeros((pl, ol));
        for b in 0..batch {
            let dyv = row_view(dy, b, self.cout, ol);
            let colv = ArrayView2::from_shape((pl, ol), &self.cols[b * pl * ol..(b + 1) * pl * ol])
                .unwrap();
            general_mat_mul(T::one(), &dyv, &colv.t(), T::one(), &mut self.weight.grad);
            if let Some(bias) = &mut self.bias {
                let s = dyv.sum_axis(Axis(1));
                bias.grad.row_mut(0).zip_mut_with(&s, |a, &v| *a += v);
            }
            general_mat_mul(T::one(), &self.weight.value.t(), &dyv, T::zero(), &mut dcols);
            col2im(
                dcols.as_slice().unwrap(),
                &g,
                dx.row_mut(b).into_slice().expect("standard layout"),
            );
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = vec![&self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }
}

/// Transposed convolution: the adjoint of a [`Conv2d`] whose geometry maps
/// the (larger) output plane back to the input plane. Weight is
/// `cin × (cout·k·k)`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d<T> {
    /// Geometry of the adjoint convolution: `c,h,w` describe the output of
    /// this layer, `ho,wo` its input grid.
    pub geom: ConvGeom,
    pub cin: usize,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    input: Option<Array2<T>>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new(geom: ConvGeom, weight: Array2<T>, with_bias: bool) -> Self {
        let cin = weight.nrows();
        assert_eq!(weight.ncols(), geom.patch_len());
        let bias = with_bias.then(|| Param::new(Array2::zeros((1, geom.c))));
        Self { geom, cin, weight: Param::new(weight), bias, input: None }
    }

    pub fn in_dim(&self) -> usize {
        self.cin * self.geom.out_len()
    }

    pub fn out_dim(&self) -> usize {
        self.geom.in_len()
    }

    pub fn infer(&self, x: &Array2<T>) -> Array2<T> {
        let g = &self.geom;
        let (pl, ol) = (g.patch_len(), g.out_len());
        let batch = x.nrows();
        let plane = g.h * g.w;
        let mut y = Array2::zeros((batch, g.in_len()));
        let mut cols = Array2::zeros((pl, ol));
        for b in 0..batch {
            let xv = row_view(x, b, self.cin, ol);
            general_mat_mul(T::one(), &self.weight.value.t(), &xv, T::zero(), &mut cols);
            let yr = y.row_mut(b).into_slice().expect("standard layout");
            col2im(cols.as_slice().unwrap(), g, yr);
            if let Some(bias) = &self.bias {
                for (c, &bv) in bias.value.iter().enumerate() {
                    yr[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        y
    }

    pub fn forward(&mut self, x: Array2<T>) -> Array2<T> {
        let y = self.infer(&x);
        self.input = Some(x);
        y
    }

    pub fn backward(&mut self, dy: &Array2<T>) -> Array2<T> {
        let g = self.geom;
        let (pl, ol) = (g.patch_len(), g.out_len());
        let plane = g.h * g.w;
        let x = self.input.as_ref().expect("ConvTranspose2d::backward before forward");
        let batch = dy.nrows();
        let mut dx = Array2::zeros((batch, self.cin * ol));
        let mut dcols = vec![T::zero(); pl * ol];
        for b in 0..batch {
            let dyr = dy.row(b).to_slice().expect("standard layout");
            im2col(dyr, &g, &mut dcols);
            let dcv = ArrayView2::from_shape((pl, ol), &dcols[..]).unwrap();
            let xv = row_view(x, b, self.cin, ol);
            general_mat_mul(T::one(), &xv, &dcv.t(), T::one(), &mut self.weight.grad);
            let mut dxv = row_view_mut(&mut dx, b, self.cin, ol);
            general_mat_mul(T::one(), &self.weight.value, &dcv, T::zero(), &mut dxv);
            if let Some(bias) = &mut self.bias {
                for c in 0..g.c {
                    let s: T = dyr[c * plane..(c + 1) * plane].iter().copied().sum();
                    bias.grad[[0, c]] += s;
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = vec![&self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }
}

#[derive(Clone, Debug, Default)]
pub struct Relu<T> {
    output: Option<Array2<T>>,
}

impl<T: Real> Relu<T> {
    pub fn infer(&self, x: &Array2<T>) -> Array2<T> {
        x.mapv(|v| v.max(T::zero()))
    }

    pub fn forward(&mut self, x: Array2<T>) -> Array2<T> {
        let y = x.mapv_into(|v| v.max(T::zero()));
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Array2<T>) -> Array2<T> {
        let y = self.output.as_ref().expect("Relu::backward before forward");
        let mut dx = dy.clone();
        dx.zip_mut_with(y, |d, &v| {
            if v <= T::zero() {
                *d = T::zero()
            }
        });
        dx
    }
}

pub fn logistic<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Terminal logistic unit that keeps decoder outputs inside `(0, 1)`.
#[derive(Clone, Debug, Default)]
pub struct Sigmoid<T> {
    output: Option<Array2<T>>,
}

impl<T: Real> Sigmoid<T> {
    pub fn infer(&self, x: &Array2<T>) -> Array2<T> {
        x.mapv(logistic)
    }

    pub fn forward(&mut self, x: Array2<T>) -> Array2<T> {
        let y = x.mapv_into(logistic);
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Array2<T>) -> Array2<T> {
        let y = self.output.as_ref().expect("Sigmoid::backward before forward");
        let mut dx = dy.clone();
        dx.zip_mut_with(y, |d, &s| *d *= s * (T::one() - s));
        dx
    }
}

/// Learnable per-coordinate offset. Placed before a decoder's logistic
/// unit it lets the decoder start from a prior image.
#[derive(Clone, Debug)]
pub struct PixelBias<T> {
    pub bias: Param<T>,
}

impl<T: Real> PixelBias<T> {
    pub fn new(dim: usize) -> Self {
        Self { bias: Param::new(Array2::zeros((1, dim))) }
    }

    pub fn infer(&self, x: &Array2<T>) -> Array2<T> {
        x + &self.bias.value
    }

    pub fn forward(&mut self, x: Array2<T>) -> Array2<T> {
        x + &self.bias.value
    }

    pub fn backward(&mut self, dy: &Array2<T>) -> Array2<T> {
        self.bias.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.clone()
    }
}

/// Per-channel batch normalisation over `c × hw` planes.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    pub c: usize,
    pub hw: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    momentum: T,
    eps: T,
    xhat: Option<Array2<T>>,
    inv_std: Array1<T>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(c: usize, hw: usize) -> Self {
        Self {
            c,
            hw,
            gamma: Param::new(Array2::ones((1, c))),
            beta: Param::new(Array2::zeros((1, c))),
            running_mean: Param::buffer(Array2::zeros((1, c))),
            running_var: Param::buffer(Array2::ones((1, c))),
            momentum: T::of(0.1),
            eps: T::of(1e-5),
            xhat: None,
            inv_std: Array1::zeros(c),
        }
    }

    pub fn dim(&self) -> usize {
        self.c * self.hw
    }

    pub fn infer(&self, x: &Array2<T>) -> Array2<T> {
        let mut y = x.clone();
        for c in 0..self.c {
            let inv = T::one() / (self.running_var.value[[0, c]] + self.eps).sqrt();
            let (m, g, b) =
                (self.running_mean.value[[0, c]], self.gamma.value[[0, c]], self.beta.value[[0, c]]);
            for mut row in y.rows_mut() {
                let s = row.as_slice_mut().unwrap();
                s[c * self.hw..(c + 1) * self.hw]
                    .iter_mut()
                    .for_each(|v| *v = g * (*v - m) * inv + b);
            }
        }
        y
    }

    pub fn forward(&mut self, x: Array2<T>) -> Array2<T> {
        let batch = x.nrows();
        let count = T::of((batch * self.hw) as f64);
        let mut xhat = x;
        for c in 0..self.c {
            let range = c * self.hw..(c + 1) * self.hw;
            let mut sum = T::zero();
            for row in xhat.rows() {
                sum += row.as_slice().unwrap()[range.clone()].iter().copied().sum::<T>();
            }
            let mean = sum / count;
            let mut sq = T::zero();
            for row in xhat.rows() {
                sq += row.as_slice().unwrap()[range.clone()]
                    .iter()
                    .map(|&v| (v - mean) * (v - mean))
                    .sum::<T>();
            }
            let var = sq / count;
            let inv = T::one() / (var + self.eps).sqrt();
            self.inv_std[c] = inv;
            for mut row in xhat.rows_mut() {
                row.as_slice_mut().unwrap()[range.clone()]
                    .iter_mut()
                    .for_each(|v| *v = (*v - mean) * inv);
            }
            let m = self.momentum;
            let unbiased = if batch * self.hw > 1 {
                sq / (count - T::one())
            } else {
                var
            };
            let rm = &mut self.running_mean.value[[0, c]];
            *rm = (T::one() - m) * *rm + m * mean;
            let rv = &mut self.running_var.value[[0, c]];
            *rv = (T::one() - m) * *rv + m * unbiased;
        }
        let mut y = xhat.clone();
        for c in 0..self.c {
            let (g, b) = (self.gamma.value[[0, c]], self.beta.value[[0, c]]);
            for mut row in y.rows_mut() {
                row.as_slice_mut().unwrap()[c * self.hw..(c + 1) * self.hw]
                    .iter_mut()
                    .for_each(|v| *v = g * *v + b);
            }
        }
        self.xhat = Some(xhat);
        y
    }

    pub fn backward(&mut self, dy: &Array2<T>) -> Array2<T> {
        let xhat = self.xhat.as_ref().expect("BatchNorm2d::backward before forward");
        let count = T::of((dy.nrows() * self.hw) as f64);
        let mut dx = Array2::zeros(dy.raw_dim());
        for c in 0..self.c {
            let range = c * self.hw..(c + 1) * self.hw;
            let g = self.gamma.value[[0, c]];
            let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
            for (dr, xr) in dy.rows().into_iter().zip(xhat.rows()) {
                let (ds, xs) = (&dr.as_slice().unwrap()[range.clone()], &xr.as_slice().unwrap()[range.clone()]);
                for (&d, &h) in ds.iter().zip(xs) {
                    sum_dy += d;
                    sum_dy_xhat += d * h;
                }
            }
            self.gamma.grad[[0, c]] += sum_dy_xhat;
            self.beta.grad[[0, c]] += sum_dy;
            let k = g * self.inv_std[c] / count;
            for ((dr, xr), mut out) in dy.rows().into_iter().zip(xhat.rows()).zip(dx.rows_mut()) {
                let (ds, xs) = (&dr.as_slice().unwrap()[range.clone()], &xr.as_slice().unwrap()[range.clone()]);
                let os = &mut out.as_slice_mut().unwrap()[range.clone()];
                for ((o, &d), &h) in os.iter_mut().zip(ds).zip(xs) {
                    *o = k * (count * d - sum_dy - h * sum_dy_xhat);
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }
}

/// Mean over each `hw` plane: `(B, c·hw) → (B, c)`.
#[derive(Clone, Debug)]
pub struct GlobalAvgPool {
    pub c: usize,
    pub hw: usize,
}

impl GlobalAvgPool {
    pub fn infer<T: Real>(&self, x: &Array2<T>) -> Array2<T> {
        let inv = T::one() / T::of(self.hw as f64);
        let mut y = Array2::zeros((x.nrows(), self.c));
        for (xr, mut yr) in x.rows().into_iter().zip(y.rows_mut()) {
            let s = xr.as_slice().unwrap();
            for c in 0..self.c {
                yr[c] = s[c * self.hw..(c + 1) * self.hw].iter().copied().sum::<T>() * inv;
            }
        }
        y
    }

    pub fn backward<T: Real>(&self, dy: &Array2<T>) -> Array2<T> {
        let inv = T::one() / T::of(self.hw as f64);
        let mut dx = Array2::zeros((dy.nrows(), self.c * self.hw));
        for (dr, mut xr) in dy.rows().into_iter().zip(dx.rows_mut()) {
            let s = xr.as_slice_mut().unwrap();
            for c in 0..self.c {
                let v = dr[c] * inv;
                s[c * self.hw..(c + 1) * self.hw].iter_mut().for_each(|x| *x = v);
            }
        }
        dx
    }
}

/// Spatial operator inside a residual block: plain convolution on the
/// classifier side, transposed convolution on the decoder side.
#[derive(Clone, Debug)]
pub enum Spatial<T> {
    Conv(Conv2d<T>),
    ConvT(ConvTranspose2d<T>),
}

impl<T: Real> Spatial<T> {
    pub fn infer(&self, x: &Array2<T>) -> Array2<T> {
        match self {
            Spatial::Conv(l) => l.infer(x),
            Spatial::ConvT(l) => l.infer(x),
        }
    }

    pub fn forward(&mut self, x: Array2<T>) -> Array2<T> {
        match self {
            Spatial::Conv(l) => l.forward(x),
            Spatial::ConvT(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, dy: &Array2<T>) -> Array2<T> {
        match self {
            Spatial::Conv(l) => l.backward(dy),
            Spatial::ConvT(l) => l.backward(dy),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Spatial::Conv(l) => l.params_mut(),
            Spatial::ConvT(l) => l.params_mut(),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Spatial::Conv(l) => l.params(),
            Spatial::ConvT(l) => l.params(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Spatial::Conv(l) => l.out_dim(),
            Spatial::ConvT(l) => l.out_dim(),
        }
    }
}

/// Pre-activation wide residual block:
/// `o = relu(bn1(x)); y = op2(relu(bn2(op1(o)))) + (shortcut(o) or x)`.
#[derive(Clone, Debug)]
pub struct ResidualBlock<T> {
    pub bn1: BatchNorm2d<T>,
    pub op1: Spatial<T>,
    pub bn2: BatchNorm2d<T>,
    pub op2: Spatial<T>,
    pub shortcut: Option<Spatial<T>>,
    act1: Relu<T>,
    act2: Relu<T>,
}

impl<T: Real> ResidualBlock<T> {
    pub fn new(
        bn1: BatchNorm2d<T>,
        op1: Spatial<T>,
        bn2: BatchNorm2d<T>,
        op2: Spatial<T>,
        shortcut: Option<Spatial<T>>,
    ) -> Self {
        Self { bn1, op1, bn2, op2, shortcut, act1: Relu::default(), act2: Relu::default() }
    }

    pub fn infer(&self, x: &Array2<T>) -> Array2<T> {
        let o = self.act1.infer(&self.bn1.infer(x));
        let a = self.op1.infer(&o);
        let r = self.op2.infer(&self.act2.infer(&self.bn2.infer(&a)));
        match &self.shortcut {
            Some(sc) => r + sc.infer(&o),
            None => r + x,
        }
    }

    pub fn forward(&mut self, x: Array2<T>) -> Array2<T> {
        let o = self.act1.forward(self.bn1.forward(x.clone()));
        let a = self.op1.forward(o.clone());
        let b = self.act2.forward(self.bn2.forward(a));
        let r = self.op2.forward(b);
        match &mut self.shortcut {
            Some(sc) => r + sc.forward(o),
            None => r + x,
        }
    }

    pub fn backward(&mut self, dy: &Array2<T>) -> Array2<T> {
        let db = self.op2.backward(dy);
        let da = self.bn2.backward(&self.act2.backward(&db));
        let mut d_o = self.op1.backward(&da);
        match &mut self.shortcut {
            Some(sc) => {
                d_o += &sc.backward(dy);
                self.bn1.backward(&self.act1.backward(&d_o))
            }
            None => self.bn1.backward(&self.act1.backward(&d_o)) + dy,
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.bn1.params_mut();
        v.extend(self.op1.params_mut());
        v.extend(self.bn2.params_mut());
        v.extend(self.op2.params_mut());
        if let Some(sc) = &mut self.shortcut {
            v.extend(sc.params_mut());
        }
        v
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.bn1.params();
        v.extend(self.op1.params());
        v.extend(self.bn2.params());
        v.extend(self.op2.params());
        if let Some(sc) = &self.shortcut {
            v.extend(sc.params());
        }
        v
    }

    pub fn out_dim(&self) -> usize {
        self.op2.out_dim()
    }
}

//! Structural similarity with an 11×11 Gaussian window (σ = 1.5), valid
//! placement at stride 1, per channel, averaged over windows and channels.
//! Images smaller than the window use a window of `min(11, H, W)` pixels
//! cut from the same Gaussian.

use crate::datahub::ImageShape;
use crate::scalar::Real;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;

/// Normalised 1-D Gaussian of length `n`.
pub fn gaussian_kernel(n: usize) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..n).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

struct Filter<T> {
    k: Vec<T>,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    tmp: Vec<T>,
}

impl<T: Real> Filter<T> {
    fn new(h: usize, w: usize) -> Self {
        let n = WINDOW.min(h).min(w);
        let k = gaussian_kernel(n).into_iter().map(T::of).collect();
        let (oh, ow) = (h - n + 1, w - n + 1);
        Self { k, h, w, oh, ow, tmp: vec![T::zero(); h * ow] }
    }

    fn windows(&self) -> usize {
        self.oh * self.ow
    }

    /// Valid separable correlation, `out` has `oh × ow` entries.
    fn apply(&mut self, src: &[T], out: &mut [T]) {
        let n = self.k.len();
        for y in 0..self.h {
            let row = &src[y * self.w..(y + 1) * self.w];
            for x in 0..self.ow {
                let mut s = T::zero();
                for (a, &kv) in self.k.iter().enumerate() {
                    s += kv * row[x + a];
                }
                self.tmp[y * self.ow + x] = s;
            }
        }
        for y in 0..self.oh {
            for x in 0..self.ow {
                let mut s = T::zero();
                for a in 0..n {
                    s += self.k[a] * self.tmp[(y + a) * self.ow + x];
                }
                out[y * self.ow + x] = s;
            }
        }
    }

    /// Adjoint of [`Filter::apply`], accumulated into `out` (`h × w`).
    fn adjoint(&mut self, m: &[T], out: &mut [T]) {
        let n = self.k.len();
        self.tmp.iter_mut().for_each(|v| *v = T::zero());
        for y in 0..self.oh {
            for x in 0..self.ow {
                let g = m[y * self.ow + x];
                for a in 0..n {
                    self.tmp[(y + a) * self.ow + x] += self.k[a] * g;
                }
            }
        }
        for y in 0..self.h {
            for x in 0..self.ow {
                let g = self.tmp[y * self.ow + x];
                for (a, &kv) in self.k.iter().enumerate() {
                    out[y * self.w + x + a] += kv * g;
                }
            }
        }
    }
}

/// Raw (unclamped) mean SSIM between `a` and `b`, both channel-major.
/// When `grad` is given, `scale · ∂SSIM/∂a` is added to it.
pub fn ssim_raw_with_grad<T: Real>(a: &[T], b: &[T], shape: ImageShape, grad: Option<(&mut [T], T)>) -> T {
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    let plane = h * w;
    assert_eq!(a.len(), plane * c, "ssim input length");
    assert_eq!(b.len(), plane * c, "ssim input length");
    let mut f = Filter::<T>::new(h, w);
    let nw = f.windows();
    let c1 = T::of(K1 * K1);
    let c2 = T::of(K2 * K2);
    let two = T::of(2.0);
    let mut maps: Vec<Vec<T>> = vec![vec![T::zero(); nw]; 5];
    let mut prod = vec![T::zero(); plane];
    let mut total = T::zero();
    let mut grad = grad;
    let mut d_mu = vec![T::zero(); nw];
    let mut d_xx = vec![T::zero(); nw];
    let mut d_xy = vec![T::zero(); nw];
    let norm = T::of((nw * c) as f64);
    for ch in 0..c {
        let x = &a[ch * plane..(ch + 1) * plane];
        let y = &b[ch * plane..(ch + 1) * plane];
        f.apply(x, &mut maps[0]);
        f.apply(y, &mut maps[1]);
        for (p, &v) in prod.iter_mut().zip(x) {
            *p = v * v;
        }
        f.apply(&prod, &mut maps[2]);
        for (p, &v) in prod.iter_mut().zip(y) {
            *p = v * v;
        }
        f.apply(&prod, &mut maps[3]);
        for ((p, &u), &v) in prod.iter_mut().zip(x).zip(y) {
            *p = u * v;
        }
        f.apply(&prod, &mut maps[4]);
        for i in 0..nw {
            let (mx, my) = (maps[0][i], maps[1][i]);
            let vx = maps[2][i] - mx * mx;
            let vy = maps[3][i] - my * my;
            let cxy = maps[4][i] - mx * my;
            let a1 = two * mx * my + c1;
            let a2 = two * cxy + c2;
            let b1 = mx * mx + my * my + c1;
            let b2 = vx + vy + c2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if grad.is_some() {
                d_mu[i] = s * (two * my / a1 - two * mx / b1) + (s / b2) * (two * mx) - (two * s / a2) * my;
                d_xx[i] = -s / b2;
                d_xy[i] = two * s / a2;
            }
        }
        if let Some((g, scale)) = grad.as_mut() {
            let k = *scale / norm;
            let gp = &mut g[ch * plane..(ch + 1) * plane];
            d_mu.iter_mut().for_each(|v| *v *= k);
            f.adjoint(&d_mu, gp);
            // the squared and cross terms need their own adjoint images
            prod.iter_mut().for_each(|v| *v = T::zero());
            d_xx.iter_mut().for_each(|v| *v *= k);
            f.adjoint(&d_xx, &mut prod);
            for ((gv, &p), &xv) in gp.iter_mut().zip(&prod).zip(x) {
                *gv += two * xv * p;
            }
            prod.iter_mut().for_each(|v| *v = T::zero());
            d_xy.iter_mut().for_each(|v| *v *= k);
            f.adjoint(&d_xy, &mut prod);
            for ((gv, &p), &yv) in gp.iter_mut().zip(&prod).zip(y) {
                *gv += yv * p;
            }
        }
    }
    total / norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalised_and_symmetric() {
        let k = gaussian_kernel(11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(k[i], k[10 - i]);
        }
    }

    #[test]
    fn adjoint_identity() {
        let (h, w) = (13, 12);
        let mut f = Filter::<f64>::new(h, w);
        let x: Vec<f64> = (0..h * w).map(|i| ((i * 37) % 17) as f64 / 17.0).collect();
        let m: Vec<f64> = (0..f.windows()).map(|i| ((i * 11) % 7) as f64 - 3.0).collect();
        let mut fx = vec![0.0; f.windows()];
        f.apply(&x, &mut fx);
        let mut ftm = vec![0.0; h * w];
        f.adjoint(&m, &mut ftm);
        let lhs: f64 = fx.iter().zip(&m).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&ftm).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}

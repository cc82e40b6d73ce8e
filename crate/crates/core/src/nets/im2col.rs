use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Geometry of a 2-D correlation over a `c × h × w` plane producing a
/// `ho × wo` grid. Transposed convolutions reuse it as their adjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if h + 2 * pad < k || w + 2 * pad < k || stride == 0 {
            return None;
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Some(Self { c, h, w, k, stride, pad, ho, wo })
    }

    /// Rows of the unfolded matrix.
    pub fn patch_len(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn out_len(&self) -> usize {
        self.ho * self.wo
    }

    pub fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    fn source(&self, o: usize, kk: usize, limit: usize) -> Option<usize> {
        let p = (o * self.stride + kk) as isize - self.pad as isize;
        if p >= 0 && (p as usize) < limit {
            Some(p as usize)
        } else {
            None
        }
    }
}

/// Unfolds one plane into a `(c·k·k) × (ho·wo)` row-major matrix.
pub fn im2col<T: Real>(input: &[T], g: &ConvGeom, cols: &mut [T]) {
    debug_assert_eq!(input.len(), g.in_len());
    debug_assert_eq!(cols.len(), g.patch_len() * g.out_len());
    let ol = g.out_len();
    for ci in 0..g.c {
        let plane = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * ol..(row + 1) * ol];
                for oy in 0..g.ho {
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    match g.source(oy, ky, g.h) {
                        None => drow.iter_mut().for_each(|v| *v = T::zero()),
                        Some(iy) => {
                            let srow = &plane[iy * g.w..(iy + 1) * g.w];
                            for (ox, v) in drow.iter_mut().enumerate() {
                                *v = match g.source(ox, kx, g.w) {
                                    Some(ix) => srow[ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into a plane.
/// `out` must be zeroed by the caller if accumulation is not wanted.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeom, out: &mut [T]) {
    debug_assert_eq!(out.len(), g.in_len());
    debug_assert_eq!(cols.len(), g.patch_len() * g.out_len());
    let ol = g.out_len();
    for ci in 0..g.c {
        let plane = &mut out[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * ol..(row + 1) * ol];
                for oy in 0..g.ho {
                    let Some(iy) = g.source(oy, ky, g.h) else { continue };
                    let srow = &src[oy * g.wo..(oy + 1) * g.wo];
                    let prow = &mut plane[iy * g.w..(iy + 1) * g.w];
                    for (ox, &v) in srow.iter().enumerate() {
                        if let Some(ix) = g.source(ox, kx, g.w) {
                            prow[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_formula() {
        let g = ConvGeom::new(1, 32, 32, 3, 2, 1).unwrap();
        assert_eq!((g.ho, g.wo), (16, 16));
        let g = ConvGeom::new(3, 8, 8, 3, 1, 1).unwrap();
        assert_eq!((g.ho, g.wo), (8, 8));
        assert!(ConvGeom::new(1, 2, 2, 5, 1, 0).is_none());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for arbitrary x, y.
        let g = ConvGeom::new(2, 5, 6, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..g.in_len()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let y: Vec<f64> =
            (0..g.patch_len() * g.out_len()).map(|i| ((i * 104729) % 11) as f64 - 5.0).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, &g, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}

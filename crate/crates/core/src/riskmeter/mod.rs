//! Gaussian statistics of the data distribution, Mahalanobis distances and
//! the reconstruction risk `R = mean d(x, μ) / max(d(x, x̃), ε)`.
//!
//! Every quadratic form goes through the Cholesky factor `L` of `Σ + λI`:
//! `d(a, b) = ‖L⁻¹(a − b)‖₂`.

use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde_json::json;

use crate::container::{load_archive, save_archive, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub use crate::objectives::psnr;

/// Pivots below this fraction of the matching diagonal entry of `Σ + λI`
/// count as singular.
pub const PIVOT_TOLERANCE: f64 = 1e-10;
/// Default ridge is this multiple of `trace(Σ)/D`.
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-3;
/// Default ε floor, relative to the mean `d(x, μ)` of the scored pairs.
pub const DEFAULT_FLOOR_SCALE: f64 = 1e-6;

const FIT_CHUNK: usize = 4096;
const SOLVE_BLOCK: usize = 64;

#[derive(Clone, Debug)]
pub struct GaussianStats {
    mu: Array1<f64>,
    sigma: Array2<f64>,
    ridge: f64,
    fitted_on: usize,
    /// Lower Cholesky factor of `Σ + λI`.
    chol: Array2<f64>,
    log_det: f64,
}

/// Unbiased mean and covariance of the rows of `samples`, plus the
/// factorisation of `Σ + λI`. `ridge = None` picks `1e-3·trace(Σ)/D`.
pub fn fit_gaussian_stats<T: Real>(samples: ArrayView2<T>, ridge: Option<f64>) -> Result<GaussianStats> {
    let (n, d) = samples.dim();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 samples to fit a covariance, got {n}")));
    }
    if d == 0 {
        return Err(Error::invalid("samples have no coordinates"));
    }
    let mut mu = Array1::<f64>::zeros(d);
    for row in samples.rows() {
        for (m, &v) in mu.iter_mut().zip(row) {
            *m += v.as_f64();
        }
    }
    mu /= n as f64;
    let mut sigma = Array2::<f64>::zeros((d, d));
    let mut start = 0;
    while start < n {
        let end = (start + FIT_CHUNK).min(n);
        let mut c = samples.slice(s![start..end, ..]).mapv(|v| v.as_f64());
        c -= &mu;
        general_mat_mul(1.0, &c.t(), &c, 1.0, &mut sigma);
        start = end;
    }
    sigma /= (n - 1) as f64;
    // symmetrise away accumulation noise
    let st = sigma.t().to_owned();
    sigma = (&sigma + &st) * 0.5;
    let ridge = match ridge {
        Some(r) => r,
        None => DEFAULT_RIDGE_SCALE * sigma.diag().sum() / d as f64,
    };
    GaussianStats::from_moments(mu, sigma, ridge, n)
}

impl GaussianStats {
    pub fn from_moments(mu: Array1<f64>, sigma: Array2<f64>, ridge: f64, fitted_on: usize) -> Result<Self> {
        let d = mu.len();
        if sigma.dim() != (d, d) {
            return Err(Error::shape(format!("covariance {:?} for mean of length {d}", sigma.dim())));
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::invalid(format!("ridge must be finite and >= 0, got {ridge}")));
        }
        let mut a = sigma.clone();
        for i in 0..d {
            a[[i, i]] += ridge;
        }
        let chol = cholesky(a)?;
        let log_det = 2.0 * chol.diag().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { mu, sigma, ridge, fitted_on, chol, log_det })
    }

    /// Zero mean, identity covariance: Mahalanobis equals Euclidean.
    pub fn identity(d: usize) -> Self {
        Self::from_moments(Array1::zeros(d), Array2::eye(d), 0.0, 0).expect("identity is positive definite")
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &Array1<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &Array2<f64> {
        &self.sigma
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn fitted_on(&self) -> usize {
        self.fitted_on
    }

    pub fn cholesky_factor(&self) -> &Array2<f64> {
        &self.chol
    }

    /// `ln det(Σ + λI)`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Dense `(Σ + λI)⁻¹`. Only meant for validation; scoring never
    /// forms it.
    pub fn sigma_inv(&self) -> Array2<f64> {
        let d = self.dim();
        let w = self.whiten(Array2::eye(d).view());
        // rows of w are (L⁻¹ e_i)ᵀ, so wᵀw = L⁻ᵀL⁻¹
        w.t().dot(&w)
    }

    /// Solves `L z = v` for every row `v`, returning the rows `z`.
    pub fn whiten(&self, rows: ArrayView2<f64>) -> Array2<f64> {
        let (n, d) = rows.dim();
        assert_eq!(d, self.dim(), "whiten dimension");
        let mut z = rows.to_owned();
        let mut j0 = 0;
        while j0 < d {
            let j1 = (j0 + SOLVE_BLOCK).min(d);
            if j0 > 0 {
                let (done, mut rest) = z.view_mut().split_at(Axis(1), j0);
                let mut blk = rest.slice_mut(s![.., ..j1 - j0]);
                let lb = self.chol.slice(s![j0..j1, ..j0]);
                general_mat_mul(-1.0, &done, &lb.t(), 1.0, &mut blk);
            }
            for r in 0..n {
                for j in j0..j1 {
                    let mut acc = z[[r, j]];
                    for k in j0..j {
                        acc -= self.chol[[j, k]] * z[[r, k]];
                    }
                    z[[r, j]] = acc / self.chol[[j, j]];
                }
            }
            j0 = j1;
        }
        z
    }

    /// `sqrt((a − b)ᵀ (Σ + λI)⁻¹ (a − b))`.
    pub fn mahalanobis(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        let diff = (&a - &b).insert_axis(Axis(0));
        let z = self.whiten(diff.view());
        z.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Row-wise distances between matching rows of `a` and `b`.
    pub fn mahalanobis_rows<T: Real>(&self, a: ArrayView2<T>, b: ArrayView2<T>) -> Vec<f64> {
        assert_eq!(a.dim(), b.dim(), "paired rows");
        let diff = Array2::from_shape_fn(a.dim(), |(i, j)| a[[i, j]].as_f64() - b[[i, j]].as_f64());
        self.row_norms(diff)
    }

    /// Distance from every row of `a` to the mean.
    pub fn distances_to_mean<T: Real>(&self, a: ArrayView2<T>) -> Vec<f64> {
        let diff = Array2::from_shape_fn(a.dim(), |(i, j)| a[[i, j]].as_f64() - self.mu[j]);
        self.row_norms(diff)
    }

    fn row_norms(&self, diff: Array2<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(diff.nrows());
        for chunk in diff.axis_chunks_iter(Axis(0), FIT_CHUNK) {
            let z = self.whiten(chunk);
            out.extend(z.rows().into_iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()));
        }
        out
    }

    pub fn log_density(&self, x: ArrayView1<f64>) -> f64 {
        let d = self.mahalanobis(x, self.mu.view());
        let dim = self.dim() as f64;
        -0.5 * dim * (2.0 * std::f64::consts::PI).ln() - 0.5 * self.log_det - 0.5 * d * d
    }

    pub fn gaussian_density(&self, x: ArrayView1<f64>) -> f64 {
        self.log_density(x).exp()
    }

    /// Writes `μ`, `Σ` and the ridge into an archive; the factorisation is
    /// recomputed on load.
    pub fn save(&self, path: &Path) -> Result<()> {
        let d = self.dim();
        let header = json!({
            "kind": "gaussian-stats",
            "dim": d,
            "ridge": self.ridge,
            "fitted_on": self.fitted_on,
        });
        let tensors = vec![
            ("mu".to_string(), Tensor::f64(vec![d], self.mu.to_vec())),
            ("sigma".to_string(), Tensor::f64(vec![d, d], self.sigma.iter().copied().collect())),
        ];
        save_archive(path, header, &tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, tensors) = load_archive(path)?;
        if header["kind"] != "gaussian-stats" {
            return Err(Error::Format(format!("{} does not hold Gaussian statistics", path.display())));
        }
        let ridge = header["ridge"].as_f64().ok_or_else(|| Error::Format("missing ridge".into()))?;
        let fitted_on = header["fitted_on"].as_u64().unwrap_or_default() as usize;
        let get = |name: &str| {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))
        };
        let mu = get("mu")?;
        let sigma = get("sigma")?;
        let d = mu.numel();
        if sigma.shape != vec![d, d] {
            return Err(Error::Format("covariance shape does not match mean".into()));
        }
        let sigma = Array2::from_shape_vec((d, d), sigma.to_f64_vec()).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_moments(Array1::from(mu.to_f64_vec()), sigma, ridge, fitted_on)
    }
}

/// Row-oriented Cholesky with a relative pivot check.
fn cholesky(mut a: Array2<f64>) -> Result<Array2<f64>> {
    let d = a.nrows();
    for j in 0..d {
        let orig = a[[j, j]];
        let mut pivot = orig;
        for k in 0..j {
            pivot -= a[[j, k]] * a[[j, k]];
        }
        if !(pivot > PIVOT_TOLERANCE * orig.abs()) || !(pivot > 0.0) || !pivot.is_finite() {
            return Err(Error::IllConditioned { index: j, pivot });
        }
        let ljj = pivot.sqrt();
        a[[j, j]] = ljj;
        let (head, mut tail) = a.view_mut().split_at(Axis(0), j + 1);
        let rj = head.row(j);
        for mut row in tail.rows_mut() {
            let mut acc = row[j];
            for k in 0..j {
                acc -= row[k] * rj[k];
            }
            row[j] = acc / ljj;
        }
    }
    for j in 0..d {
        for k in j + 1..d {
            a[[j, k]] = 0.0;
        }
    }
    Ok(a)
}

/// Default ε for a set of pairs: `1e-6 · mean d(x, μ)`.
pub fn default_floor(dist_to_mean: &[f64]) -> f64 {
    let m = dist_to_mean.iter().sum::<f64>() / dist_to_mean.len().max(1) as f64;
    (DEFAULT_FLOOR_SCALE * m).max(f64::MIN_POSITIVE)
}

/// Per-pair terms `d(x, μ) / max(d(x, x̃), ε)`.
pub fn risk_terms<T: Real>(
    originals: ArrayView2<T>,
    recons: ArrayView2<T>,
    stats: &GaussianStats,
    floor: Option<f64>,
) -> Result<Vec<f64>> {
    if originals.nrows() == 0 {
        return Err(Error::invalid("reconstruction risk needs at least one pair"));
    }
    if originals.dim() != recons.dim() || originals.ncols() != stats.dim() {
        return Err(Error::shape(format!(
            "pairs {:?} / {:?} against stats of dimension {}",
            originals.dim(),
            recons.dim(),
            stats.dim()
        )));
    }
    let num = stats.distances_to_mean(originals);
    let den = stats.mahalanobis_rows(originals, recons);
    let eps = floor.unwrap_or_else(|| default_floor(&num));
    Ok(num.iter().zip(&den).map(|(a, b)| a / b.max(eps)).collect())
}

pub fn reconstruction_risk<T: Real>(
    originals: ArrayView2<T>,
    recons: ArrayView2<T>,
    stats: &GaussianStats,
    floor: Option<f64>,
) -> Result<f64> {
    let t = risk_terms(originals, recons, stats, floor)?;
    Ok(t.iter().sum::<f64>() / t.len() as f64)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "paired samples");
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

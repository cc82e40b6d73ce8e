use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::layers::logistic;
use crate::datahub::LabelKind;
use crate::scalar::Real;

/// How a classifier's raw scores are released to whoever observes them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "decimals")]
pub enum OutputMode {
    Logits,
    Softmax,
    Sigmoid,
    /// Softmax rounded to `q` decimals.
    Rounded(u32),
    Argmax,
}

impl OutputMode {
    pub fn is_valid(&self) -> bool {
        !matches!(self, OutputMode::Rounded(0))
    }

    pub fn compatible_with(&self, kind: LabelKind) -> bool {
        match self {
            OutputMode::Softmax | OutputMode::Rounded(_) => kind == LabelKind::Categorical,
            OutputMode::Sigmoid => kind == LabelKind::Binary,
            OutputMode::Logits | OutputMode::Argmax => true,
        }
    }

    /// Whether gradients can flow through the transform during training.
    pub fn is_differentiable(&self) -> bool {
        matches!(self, OutputMode::Logits | OutputMode::Softmax | OutputMode::Sigmoid)
    }
}

impl std::fmt::Display for OutputMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OutputMode::Logits => write!(f, "logits"),
            OutputMode::Softmax => write!(f, "softmax"),
            OutputMode::Sigmoid => write!(f, "sigmoid"),
            OutputMode::Rounded(q) => write!(f, "rounded({q})"),
            OutputMode::Argmax => write!(f, "argmax"),
        }
    }
}

impl std::str::FromStr for OutputMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "logits" => Ok(OutputMode::Logits),
            "softmax" => Ok(OutputMode::Softmax),
            "sigmoid" => Ok(OutputMode::Sigmoid),
            "argmax" => Ok(OutputMode::Argmax),
            _ => {
                let q = t
                    .strip_prefix("rounded(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| t.strip_prefix("round:"))
                    .ok_or_else(|| format!("unknown output mode `{s}`"))?;
                let q: u32 = q.parse().map_err(|_| format!("bad decimals in `{s}`"))?;
                if q == 0 {
                    return Err("rounded(q) needs q >= 1".into());
                }
                Ok(OutputMode::Rounded(q))
            }
        }
    }
}

/// Result of releasing one output vector.
#[derive(Clone, Debug, PartialEq)]
pub enum Released {
    Vector(Vec<f64>),
    Index(usize),
}

impl Released {
    pub fn into_vector(self) -> Option<Vec<f64>> {
        match self {
            Released::Vector(v) => Some(v),
            Released::Index(_) => None,
        }
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Smallest index of the maximum.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// Rounds a probability vector to `q` decimals on the grid of multiples of
/// `10^-q`, then puts the rounding residual into the largest entry so the
/// grid counts sum to exactly `10^q`. If the residual is negative and larger
/// than the largest entry, the remainder is taken from the next-largest
/// entries.
pub fn round_simplex(p: &[f64], q: u32) -> Vec<f64> {
    let scale = 10f64.powi(q as i32);
    let total = 10i64.pow(q);
    let mut counts: Vec<i64> = p.iter().map(|&v| (v * scale).round() as i64).collect();
    let mut residual = total - counts.iter().sum::<i64>();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    for &i in &order {
        if residual == 0 {
            break;
        }
        let next = (counts[i] + residual).max(0);
        residual -= next - counts[i];
        counts[i] = next;
    }
    counts.into_iter().map(|c| c as f64 / scale).collect()
}

pub fn apply_output_mode(logits: &[f64], mode: OutputMode) -> Released {
    match mode {
        OutputMode::Logits => Released::Vector(logits.to_vec()),
        OutputMode::Softmax => Released::Vector(softmax(logits)),
        OutputMode::Sigmoid => Released::Vector(logits.iter().map(|&v| logistic(v)).collect()),
        OutputMode::Rounded(q) => Released::Vector(round_simplex(&softmax(logits), q)),
        OutputMode::Argmax => Released::Index(argmax(logits)),
    }
}

/// Batched differentiable release used while training the attack decoder.
pub fn release_batch<T: Real>(logits: &Array2<T>, mode: OutputMode) -> Array2<T> {
    match mode {
        OutputMode::Logits => logits.clone(),
        OutputMode::Sigmoid => logits.mapv(logistic),
        OutputMode::Softmax => {
            let mut out = logits.clone();
            for mut row in out.rows_mut() {
                let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                row.mapv_inplace(|v| (v - m).exp());
                let s: T = row.iter().copied().sum();
                row.mapv_inplace(|v| v / s);
            }
            out
        }
        OutputMode::Rounded(_) | OutputMode::Argmax => {
            panic!("{mode} is not differentiable and cannot feed training")
        }
    }
}

/// Vector-Jacobian product of [`release_batch`], given its output.
pub fn release_backward<T: Real>(released: &Array2<T>, dy: &Array2<T>, mode: OutputMode) -> Array2<T> {
    match mode {
        OutputMode::Logits => dy.clone(),
        OutputMode::Sigmoid => {
            let mut dx = dy.clone();
            dx.zip_mut_with(released, |d, &s| *d *= s * (T::one() - s));
            dx
        }
        OutputMode::Softmax => {
            let mut dx = dy.clone();
            for (mut d, s) in dx.rows_mut().into_iter().zip(released.rows()) {
                let dot: T = d.iter().zip(s.iter()).map(|(&a, &b)| a * b).sum();
                d.zip_mut_with(&s, |v, &p| *v = p * (*v - dot));
            }
            dx
        }
        OutputMode::Rounded(_) | OutputMode::Argmax => {
            panic!("{mode} is not differentiable")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_uniform_softmax() {
        let p = softmax(&[2.0, 2.0, 2.0]);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rounding_matches_worked_example() {
        let p = round_simplex(&[0.87652345, 0.12347655], 1);
        assert_eq!(p, vec![0.9, 0.1]);
        let p = round_simplex(&[1.0 / 3.0; 3], 1);
        assert_eq!(p, vec![0.4, 0.3, 0.3]);
    }

    #[test]
    fn rounding_never_goes_negative() {
        let p = round_simplex(&[0.05; 20], 1);
        assert!(p.iter().all(|&v| v >= 0.0));
        let counts: i64 = p.iter().map(|v| (v * 10.0).round() as i64).sum();
        assert_eq!(counts, 10);
    }

    #[test]
    fn argmax_prefers_smallest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(apply_output_mode(&[0.0, 0.0], OutputMode::Argmax), Released::Index(0));
    }

    #[test]
    fn parse_modes() {
        assert_eq!("rounded(2)".parse::<OutputMode>().unwrap(), OutputMode::Rounded(2));
        assert_eq!("Softmax".parse::<OutputMode>().unwrap(), OutputMode::Softmax);
        assert!("rounded(0)".parse::<OutputMode>().is_err());
        assert!("tanh".parse::<OutputMode>().is_err());
    }

    #[test]
    fn compatibility_rules() {
        assert!(!OutputMode::Softmax.compatible_with(LabelKind::Binary));
        assert!(!OutputMode::Sigmoid.compatible_with(LabelKind::Categorical));
        assert!(OutputMode::Logits.compatible_with(LabelKind::Binary));
    }

    #[test]
    fn softmax_vjp_matches_finite_differences() {
        let z = ndarray::array![[0.3f64, -1.2, 2.0, 0.1]];
        let w = ndarray::array![[0.7f64, -0.4, 1.1, 0.2]];
        let s = release_batch(&z, OutputMode::Softmax);
        let analytic = release_backward(&s, &w, OutputMode::Softmax);
        let h = 1e-6;
        for j in 0..4 {
            let mut zp = z.clone();
            zp[[0, j]] += h;
            let mut zm = z.clone();
            zm[[0, j]] -= h;
            let fp: f64 = (&release_batch(&zp, OutputMode::Softmax) * &w).sum();
            let fm: f64 = (&release_batch(&zm, OutputMode::Softmax) * &w).sum();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - analytic[[0, j]]).abs() < 1e-8, "{j}: {fd} vs {}", analytic[[0, j]]);
        }
    }
}

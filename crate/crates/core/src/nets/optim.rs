use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::layers::Param;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// First-order optimizer state for one network.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    step: i32,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr: T::of(lr),
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Applies one update from the gradients accumulated in `params`.
    pub fn step(&mut self, params: Vec<&mut Param<T>>) {
        let params: Vec<&mut Param<T>> = params.into_iter().filter(|p| p.trainable).collect();
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params {
                    let lr = self.lr;
                    Zip::from(&mut p.value).and(&p.grad).for_each(|w, &g| *w -= lr * g);
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = params.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
                    self.v = self.m.clone();
                }
                assert_eq!(self.m.len(), params.len(), "optimizer bound to another network");
                let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                let bc1 = T::one() - b1.powi(self.step);
                let bc2 = T::one() - b2.powi(self.step);
                let step_size = self.lr / bc1;
                for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
                    Zip::from(&mut p.value).and(&p.grad).and(m).and(v).for_each(|w, &g, m, v| {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        *w -= step_size * *m / ((*v / bc2).sqrt() + eps);
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Param::new(array![[1.0f64, -1.0]]);
        p.grad = array![[0.5, -3.0]];
        let mut opt = Optimizer::adam(1e-3);
        opt.step(vec![&mut p]);
        // With bias correction the first update is lr * g / |g|.
        assert!((p.value[[0, 0]] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p.value[[0, 1]] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Param::new(array![[0.25f64]]);
        let mut opt = Optimizer::adam(1e-3);
        for _ in 0..5 {
            opt.step(vec![&mut p]);
        }
        assert_eq!(p.value[[0, 0]], 0.25);
    }

    #[test]
    fn buffers_are_not_updated() {
        let mut p = Param::buffer(array![[2.0f64]]);
        p.grad = array![[1.0]];
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1);
        opt.step(vec![&mut p]);
        assert_eq!(p.value[[0, 0]], 2.0);
    }
}

use crate::scalar::Scalar;

use super::model::Parameters;

/// Cosine annealing without warmup: `lr₀ · ½(1 + cos(π s / S))`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

/// SGD with heavy-ball momentum: `v ← μv + g`, `θ ← θ − lr·v`.
#[derive(Debug, Clone, Default)]
pub struct Sgd<T> {
    momentum: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step<P: Parameters<T>>(&mut self, params: &mut P, grads: &P, lr: f64) {
        let grads = grads.tensors();
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
        }
        let mu = T::lit(self.momentum);
        let lr = T::lit(lr);
        for ((p, g), v) in params.tensors_mut().into_iter().zip(grads).zip(&mut self.velocity) {
            for ((pi, &gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = mu * *vi + gi;
                *pi -= lr * *vi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0.2, 0, 100), 0.2);
        assert!((cosine_lr(0.2, 50, 100) - 0.1).abs() < 1e-15);
        assert!(cosine_lr(0.2, 100, 100).abs() < 1e-15);
    }
}

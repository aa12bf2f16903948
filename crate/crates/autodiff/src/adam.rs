//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Moment buffers as `(first, second)` per slot, for checkpointing.
    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first, &self.second)
    }

    pub fn restore(&mut self, step: u64, first: Vec<Vec<f64>>, second: Vec<Vec<f64>>) -> Result<()> {
        if first.len() != second.len() || first.iter().zip(&second).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Invalid("adam moment buffers disagree in shape".into()));
        }
        self.step = step;
        self.first = first;
        self.second = second;
        Ok(())
    }

    /// One update of `params` from `grads`; slot `i` pairs `params[i]` with
    /// `grads[i]` and keeps its own moment estimates.
    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Invalid(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam",
                    a: p.shape().to_vec(),
                    b: g.shape().to_vec(),
                });
            }
        }
        self.begin_step();
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.apply(i, p.data_mut(), g.data());
        }
        Ok(())
    }

    /// Updates every trainable parameter of `store` from its stored gradient.
    /// Gradients are left untouched.
    pub fn update_store(&mut self, store: &mut ParamStore) {
        self.begin_step();
        for id in store.ids().collect::<Vec<_>>() {
            if !store.trainable(id) {
                continue;
            }
            let g = store.grad(id).data().to_vec();
            self.apply(id.index(), store.value_mut(id).data_mut(), &g);
        }
    }

    fn begin_step(&mut self) {
        self.step += 1;
    }

    fn apply(&mut self, slot: usize, param: &mut [f64], grad: &[f64]) {
        if slot >= self.first.len() {
            self.first.resize(slot + 1, Vec::new());
            self.second.resize(slot + 1, Vec::new());
        }
        if self.first[slot].len() != param.len() {
            self.first[slot] = vec![0.0; param.len()];
            self.second[slot] = vec![0.0; param.len()];
        }
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
        for j in 0..param.len() {
            let g = grad[j];
            m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
            v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            param[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut adam = Adam::new(0.1);
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let g = vec![Tensor::zeros(&[2])];
        for _ in 0..10 {
            adam.update(&mut p, &g).unwrap();
        }
        assert_eq!(p[0].data(), &[1.0, -2.0]);
        assert_eq!(adam.step_count(), 10);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        // With bias correction m̂ = g and v̂ = g² exactly, so each step moves
        // lr·|g|/(|g| + ε).
        let lr = 0.01;
        let mut adam = Adam::new(lr);
        let mut p = vec![Tensor::scalar(0.0)];
        let g = vec![Tensor::scalar(3.7)];
        let mut prev = 0.0;
        for _ in 0..50 {
            adam.update(&mut p, &g).unwrap();
            let x = p[0].data()[0];
            assert!(((prev - x) - lr).abs() < 1e-9, "step {}", prev - x);
            prev = x;
        }
    }

    #[test]
    fn minimizes_quadratic_bowl() {
        let mut adam = Adam::new(1e-2);
        let mut p = vec![Tensor::vector(vec![3.0, -2.0])];
        for _ in 0..2000 {
            let g = vec![p[0].map(|x| 2.0 * x)];
            adam.update(&mut p, &g).unwrap();
        }
        assert!(p[0].data().iter().all(|x| x.abs() < 1e-3), "{:?}", p[0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut adam = Adam::new(0.1);
        let mut p = vec![Tensor::zeros(&[2])];
        assert!(adam.update(&mut p, &[Tensor::zeros(&[3])]).is_err());
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn gradient_rescaling_keeps_update_signs() {
        let grads = [0.3, -1.0, 2.0];
        let run = |scale: f64| {
            let mut adam = Adam::new(0.01);
            let mut p = vec![Tensor::zeros(&[3])];
            let g = vec![Tensor::vector(grads.iter().map(|x| x * scale).collect())];
            for _ in 0..5 {
                adam.update(&mut p, &g).unwrap();
            }
            p[0].clone()
        };
        let (a, b) = (run(1.0), run(250.0));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.signum(), y.signum());
            assert!((x - y).abs() < 1e-6);
        }
    }
}

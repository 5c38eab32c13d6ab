use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::Module;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-3,
            beta1: 0.0,
            beta2: 0.99,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction; moment buffers follow the module's parameter order.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<(Array2<T>, Array2<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients. `grad_scale`
    /// multiplies every gradient first (e.g. `1 / batch`).
    pub fn step<M: Module<T> + ?Sized>(&mut self, module: &mut M, grad_scale: f64) {
        let mut params = module.params_mut();
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|(_, p)| (Array2::zeros(p.value.raw_dim()), Array2::zeros(p.value.raw_dim())))
                .collect();
        }
        assert_eq!(self.moments.len(), params.len(), "parameter set changed under optimizer");
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let scale = T::of(grad_scale);
        let eps = T::of(c.epsilon);
        for ((_, p), (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            let lr = T::of(c.learning_rate * p.lr_mult);
            let (bc1, bc2) = (T::of(bc1), T::of(bc2));
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    let g = g * scale;
                    *m = b1 * *m + one_b1 * g;
                    *v = b2 * *v + one_b2 * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use ndarray::array;

    #[test]
    fn minimizes_a_quadratic() {
        // f(w) = ½‖w − 3‖² over a 1×1 weight.
        let mut layer = Linear::<f64>::zeros(1, 1);
        let mut opt = Adam::new(AdamConfig {
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        });
        for _ in 0..2000 {
            layer.weight.grad = &layer.weight.value - &array![[3.0]];
            layer.bias.grad.fill(0.0);
            opt.step(&mut layer, 1.0);
        }
        assert!((layer.weight.value[[0, 0]] - 3.0).abs() < 1e-3);
    }
}

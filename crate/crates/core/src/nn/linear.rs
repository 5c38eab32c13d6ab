use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::{Module, Param};
use crate::Scalar;

/// Fully connected layer `y = x Wᵀ + b` over row-major batches.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    /// Shape `(out, in)`.
    pub weight: Param<T>,
    /// Shape `(1, out)`.
    pub bias: Param<T>,
    /// Runtime multiplier on the stored weight (equalized learning rate).
    pub weight_gain: f64,
    pub bias_gain: f64,
}

impl<T: Scalar> Linear<T> {
    /// He-style initialization scaled by `gain`.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let std = gain / (inputs as f64).sqrt();
        Linear {
            weight: Param::normal(outputs, inputs, std, rng),
            bias: Param::zeros(1, outputs),
            weight_gain: 1.0,
            bias_gain: 1.0,
        }
    }

    /// Unit-normal storage scaled at runtime by `gain / sqrt(in)`; `lr_mult`
    /// additionally slows learning of both weight and bias.
    pub fn equalized<R: Rng + ?Sized>(inputs: usize, outputs: usize, gain: f64, lr_mult: f64, rng: &mut R) -> Self {
        Linear {
            weight: Param::normal(outputs, inputs, 1.0 / lr_mult, rng),
            bias: Param::zeros(1, outputs),
            weight_gain: gain / (inputs as f64).sqrt() * lr_mult,
            bias_gain: lr_mult,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: Param::zeros(outputs, inputs),
            bias: Param::zeros(1, outputs),
            weight_gain: 1.0,
            bias_gain: 1.0,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut y = x.dot(&self.weight.value.t());
        let (wg, bg) = (T::of(self.weight_gain), T::of(self.bias_gain));
        if self.weight_gain != 1.0 {
            y.mapv_inplace(|v| v * wg);
        }
        let bias = self.bias.value.row(0);
        for mut row in y.rows_mut() {
            row.zip_mut_with(&bias, |o, &b| *o += b * bg);
        }
        y
    }

    /// Accumulates parameter gradients (when `param_grads`) and returns `dL/dx`.
    pub fn backward(&mut self, x: ArrayView2<T>, dy: ArrayView2<T>, param_grads: bool) -> Array2<T> {
        let (wg, bg) = (T::of(self.weight_gain), T::of(self.bias_gain));
        if param_grads {
            self.weight.grad.scaled_add(wg, &dy.t().dot(&x));
            self.bias.grad.scaled_add(bg, &dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
        }
        let mut dx = dy.dot(&self.weight.value);
        if self.weight_gain != 1.0 {
            dx.mapv_inplace(|v| v * wg);
        }
        dx
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![
            ("weight".into(), &mut self.weight),
            ("bias".into(), &mut self.bias),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn forward_matches_hand_computation() {
        let mut layer = Linear::<f64>::zeros(2, 1);
        layer.weight.value = array![[2.0, -1.0]];
        layer.bias.value = array![[0.5]];
        let y = layer.forward(array![[1.0, 3.0], [0.0, 1.0]].view());
        assert_eq!(y, array![[-0.5], [-0.5]]);
    }

    #[test]
    fn backward_accumulates_outer_product() {
        let mut layer = Linear::<f64>::zeros(2, 1);
        layer.weight.value = array![[2.0, -1.0]];
        let x = array![[1.0, 3.0]];
        let dx = layer.backward(x.view(), array![[1.0]].view(), true);
        assert_eq!(dx, array![[2.0, -1.0]]);
        assert_eq!(layer.weight.grad, array![[1.0, 3.0]]);
        assert_eq!(layer.bias.grad, array![[1.0]]);
    }
}

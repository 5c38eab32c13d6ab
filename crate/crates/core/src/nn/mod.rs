//! Minimal layer library with explicit forward/backward passes.
//!
//! Layers never cache activations; callers keep the forward inputs they need
//! and hand them back to `backward`. This keeps `forward` usable through a
//! shared reference so inference can run concurrently.

mod adain;
mod adam;
mod conv;
pub mod gradcheck;
mod linear;
pub mod ops;
pub mod persist;

pub use adain::{adain, adain_backward, adain_forward, channel_moments, AdainCache};
pub use adam::{Adam, AdamConfig};
pub use conv::{col2im, im2col, Conv2d};
pub use linear::Linear;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Scalar;

/// A trainable tensor stored as a matrix together with its gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Array2<T>,
    pub grad: Array2<T>,
    /// Multiplier applied to the optimizer learning rate for this tensor.
    pub lr_mult: f64,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Array2<T>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Param {
            value,
            grad,
            lr_mult: 1.0,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Array2::zeros((rows, cols)))
    }

    pub fn normal<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        Self::new(normal_matrix(rows, cols, std, rng))
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

pub fn normal_matrix<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut R,
) -> Array2<T> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        T::of(z * std)
    })
}

/// Anything owning named trainable parameters.
pub trait Module<T: Scalar> {
    fn params(&self) -> Vec<(String, &Param<T>)>;

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)>;

    fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }
}

/// Prepends `prefix.` to every parameter name in `items`.
pub(crate) fn scoped<P>(prefix: &str, items: Vec<(String, P)>) -> Vec<(String, P)> {
    items
        .into_iter()
        .map(|(name, p)| (format!("{prefix}.{name}"), p))
        .collect()
}

//! Parameter-free tensor operations and their derivatives.

use ndarray::{Array, Array4, ArrayView, ArrayView4, Dimension, Zip};

use crate::Scalar;

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu<T: Scalar, D: Dimension>(x: ArrayView<T, D>, slope: T) -> Array<T, D> {
    x.mapv(|v| if v > T::zero() { v } else { v * slope })
}

/// Gradient through a leaky ReLU given its *input* `x`.
pub fn leaky_relu_backward<T: Scalar, D: Dimension>(
    x: ArrayView<T, D>,
    dy: ArrayView<T, D>,
    slope: T,
) -> Array<T, D> {
    let mut dx = dy.to_owned();
    Zip::from(&mut dx).and(&x).for_each(|d, &v| {
        if v <= T::zero() {
            *d *= slope;
        }
    });
    dx
}

pub fn relu_inplace<T: Scalar, D: Dimension>(x: &mut Array<T, D>) {
    x.mapv_inplace(|v| v.max(T::zero()));
}

/// Gradient through `tanh` given its *output* `y`.
pub fn tanh_backward<T: Scalar, D: Dimension>(y: ArrayView<T, D>, dy: ArrayView<T, D>) -> Array<T, D> {
    let mut dx = dy.to_owned();
    Zip::from(&mut dx).and(&y).for_each(|d, &v| *d *= T::one() - v * v);
    dx
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2x<T: Scalar>(x: ArrayView4<T>) -> Array4<T> {
    let (b, c, h, w) = x.dim();
    Array4::from_shape_fn((b, c, 2 * h, 2 * w), |(i, j, y, x_)| x[[i, j, y / 2, x_ / 2]])
}

pub fn upsample2x_backward<T: Scalar>(dy: ArrayView4<T>) -> Array4<T> {
    let (b, c, h2, w2) = dy.dim();
    let mut dx = Array4::zeros((b, c, h2 / 2, w2 / 2));
    for ((i, j, y, x), &g) in dy.indexed_iter() {
        dx[[i, j, y / 2, x / 2]] += g;
    }
    dx
}

/// 2×2 average pooling with stride 2.
pub fn avg_pool2x<T: Scalar>(x: ArrayView4<T>) -> Array4<T> {
    let (b, c, h, w) = x.dim();
    let quarter = T::of(0.25);
    Array4::from_shape_fn((b, c, h / 2, w / 2), |(i, j, y, x_)| {
        (x[[i, j, 2 * y, 2 * x_]]
            + x[[i, j, 2 * y + 1, 2 * x_]]
            + x[[i, j, 2 * y, 2 * x_ + 1]]
            + x[[i, j, 2 * y + 1, 2 * x_ + 1]])
            * quarter
    })
}

pub fn avg_pool2x_backward<T: Scalar>(dy: ArrayView4<T>) -> Array4<T> {
    let (b, c, h, w) = dy.dim();
    let quarter = T::of(0.25);
    Array4::from_shape_fn((b, c, 2 * h, 2 * w), |(i, j, y, x)| dy[[i, j, y / 2, x / 2]] * quarter)
}

/// 2×2 max pooling with stride 2 (forward only; used by the frozen backbone).
pub fn max_pool2x<T: Scalar>(x: ArrayView4<T>) -> Array4<T> {
    let (b, c, h, w) = x.dim();
    Array4::from_shape_fn((b, c, h / 2, w / 2), |(i, j, y, x_)| {
        x[[i, j, 2 * y, 2 * x_]]
            .max(x[[i, j, 2 * y + 1, 2 * x_]])
            .max(x[[i, j, 2 * y, 2 * x_ + 1]])
            .max(x[[i, j, 2 * y + 1, 2 * x_ + 1]])
    })
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert!(softplus(-1000.0f64) < 1e-300);
    }

    #[test]
    fn pooling_and_upsampling_are_adjoint() {
        let x = Array::from_shape_fn((1, 2, 4, 4), |(_, c, y, x)| (c * 16 + y * 4 + x) as f64);
        let y = Array::from_shape_fn((1, 2, 2, 2), |(_, c, y, x)| (1 + c + y * 2 + x) as f64);
        let lhs = (&avg_pool2x(x.view()) * &y).sum();
        let rhs = (&x * &avg_pool2x_backward(y.view())).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        let lhs = (&upsample2x(y.view()) * &x).sum();
        let rhs = (&y * &upsample2x_backward(x.view())).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn max_pool_picks_block_maximum() {
        let x = Array::from_shape_fn((1, 1, 2, 2), |(_, _, y, x)| (y * 2 + x) as f32);
        assert_eq!(max_pool2x(x.view())[[0, 0, 0, 0]], 3.0);
    }
}

use ndarray::{Array1, Array2, Array3, Array4, ArrayView1, ArrayView2, ArrayView3, ArrayView4, Axis};

use crate::{Error, Result, Scalar};

/// Values kept from the forward pass for [`adain_backward`].
#[derive(Clone, Debug)]
pub struct AdainCache<T> {
    /// `(f - μ) / σ` per instance and channel.
    pub normalized: Array4<T>,
    /// `1 / σ`, shape `(batch, channels)`.
    pub inv_std: Array2<T>,
}

/// Adaptive instance normalization of a single feature map `(C, H, W)`:
/// `γ · (f − μ(f)) / σ(f) + β`, with population statistics over the spatial
/// positions of each channel and `σ = sqrt(var + eps)`.
pub fn adain<T: Scalar>(
    f: ArrayView3<T>,
    gamma: ArrayView1<T>,
    beta: ArrayView1<T>,
    eps: T,
) -> Result<Array3<T>> {
    let f4 = f.insert_axis(Axis(0));
    let g = gamma.insert_axis(Axis(0));
    let b = beta.insert_axis(Axis(0));
    let (y, _) = adain_forward(f4, g, b, eps)?;
    Ok(y.index_axis_move(Axis(0), 0))
}

/// Batched AdaIN; `gamma` and `beta` are `(batch, channels)`.
pub fn adain_forward<T: Scalar>(
    x: ArrayView4<T>,
    gamma: ArrayView2<T>,
    beta: ArrayView2<T>,
    eps: T,
) -> Result<(Array4<T>, AdainCache<T>)> {
    let (b, c, h, w) = x.dim();
    if gamma.dim() != (b, c) || beta.dim() != (b, c) {
        return Err(Error::input(format!(
            "AdaIN parameters {:?}/{:?} do not match feature map with batch {b} and {c} channels",
            gamma.dim(),
            beta.dim()
        )));
    }
    if eps <= T::zero() {
        return Err(Error::input("AdaIN eps must be positive"));
    }
    if h * w == 0 {
        return Err(Error::input("AdaIN over an empty feature map"));
    }
    let m = T::of((h * w) as f64);
    let mut normalized = x.to_owned();
    let mut out = Array4::zeros((b, c, h, w));
    let mut inv_std = Array2::zeros((b, c));
    for bi in 0..b {
        for ci in 0..c {
            let plane = x.slice(ndarray::s![bi, ci, .., ..]);
            let mean = plane.sum() / m;
            let var = plane.fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / m;
            let r = T::one() / (var + eps).sqrt();
            inv_std[[bi, ci]] = r;
            let (g, s) = (gamma[[bi, ci]], beta[[bi, ci]]);
            let mut n = normalized.slice_mut(ndarray::s![bi, ci, .., ..]);
            n.mapv_inplace(|v| (v - mean) * r);
            out.slice_mut(ndarray::s![bi, ci, .., ..])
                .assign(&n.mapv(|v| g * v + s));
        }
    }
    Ok((out, AdainCache { normalized, inv_std }))
}

/// Returns `(dx, dγ, dβ)`.
pub fn adain_backward<T: Scalar>(
    cache: &AdainCache<T>,
    gamma: ArrayView2<T>,
    dy: ArrayView4<T>,
) -> (Array4<T>, Array2<T>, Array2<T>) {
    let (b, c, h, w) = dy.dim();
    let m = T::of((h * w) as f64);
    let mut dx = Array4::zeros((b, c, h, w));
    let mut dgamma = Array2::zeros((b, c));
    let mut dbeta = Array2::zeros((b, c));
    for bi in 0..b {
        for ci in 0..c {
            let xhat = cache.normalized.slice(ndarray::s![bi, ci, .., ..]);
            let g = dy.slice(ndarray::s![bi, ci, .., ..]);
            let dg = (&g * &xhat).sum();
            let db = g.sum();
            dgamma[[bi, ci]] = dg;
            dbeta[[bi, ci]] = db;
            // dxhat = γ·dy; dx = r/M · (M·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
            let gam = gamma[[bi, ci]];
            let r = cache.inv_std[[bi, ci]];
            let scale = r * gam / m;
            let mut out = dx.slice_mut(ndarray::s![bi, ci, .., ..]);
            ndarray::Zip::from(&mut out)
                .and(&g)
                .and(&xhat)
                .for_each(|o, &gv, &xv| *o = scale * (m * gv - db - xv * dg));
        }
    }
    (dx, dgamma, dbeta)
}

/// Per-channel spatial mean and population standard deviation of `(C, H, W)`.
pub fn channel_moments<T: Scalar>(f: ArrayView3<T>) -> (Array1<T>, Array1<T>) {
    let (c, h, w) = f.dim();
    let m = T::of((h * w) as f64);
    let mut mean = Array1::zeros(c);
    let mut std = Array1::zeros(c);
    for ci in 0..c {
        let plane = f.index_axis(Axis(0), ci);
        let mu = plane.sum() / m;
        let var = plane.fold(T::zero(), |a, &v| a + (v - mu) * (v - mu)) / m;
        mean[ci] = mu;
        std[ci] = var.sqrt();
    }
    (mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};

    #[test]
    fn two_element_closed_form() {
        // μ = 2, σ = 1 → normalized (−1, 1) → 2·(−1, 1) + 5
        let f = array![[[1.0f64, 3.0]]];
        let y = adain(f.view(), array![2.0].view(), array![5.0].view(), 1e-8).unwrap();
        assert!((y[[0, 0, 0]] - 3.0).abs() < 1e-7);
        assert!((y[[0, 0, 1]] - 7.0).abs() < 1e-7);
    }

    #[test]
    fn constant_channel_yields_beta() {
        let f = Array::from_elem((1, 3, 3), 4.0f64);
        let y = adain(f.view(), array![3.0].view(), array![-1.5].view(), 1e-8).unwrap();
        assert!(y.iter().all(|&v| (v + 1.5).abs() < 1e-12));
    }

    #[test]
    fn shape_mismatch_is_input_error() {
        let f = Array::zeros((2, 2, 2));
        let err = adain::<f64>(f.view(), array![1.0].view(), array![0.0].view(), 1e-8).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn non_positive_eps_rejected() {
        let f = Array::zeros((1, 2, 2));
        assert!(adain::<f64>(f.view(), array![1.0].view(), array![0.0].view(), 0.0).is_err());
    }
}

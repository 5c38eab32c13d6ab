use ndarray::{Array2, Array4, ArrayView2, ArrayView4, Axis};
use rand::Rng;

use super::{Module, Param};
use crate::Scalar;

/// Square convolution, stride 1, "same" zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    /// Shape `(out, in * k * k)`, rows laid out as `(in, ky, kx)`.
    pub weight: Param<T>,
    /// Shape `(1, out)`.
    pub bias: Param<T>,
    /// Runtime multiplier on the stored weight (equalized learning rate).
    pub weight_gain: f64,
    in_channels: usize,
    kernel: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let fan_in = in_channels * kernel * kernel;
        let std = gain / (fan_in as f64).sqrt();
        Conv2d {
            weight: Param::normal(out_channels, fan_in, std, rng),
            bias: Param::zeros(1, out_channels),
            weight_gain: 1.0,
            in_channels,
            kernel,
        }
    }

    /// Unit-normal storage with the He constant applied at runtime.
    pub fn equalized<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let mut conv = Self::new(in_channels, out_channels, kernel, 1.0, rng);
        let fan_in = (in_channels * kernel * kernel) as f64;
        conv.weight.value.mapv_inplace(|v| v * T::of(fan_in.sqrt()));
        conv.weight_gain = gain / fan_in.sqrt();
        conv
    }

    pub fn from_parts(weight: Array2<T>, bias: Array2<T>, in_channels: usize, kernel: usize) -> Self {
        assert_eq!(weight.ncols(), in_channels * kernel * kernel);
        assert_eq!(bias.dim(), (1, weight.nrows()));
        Conv2d {
            weight: Param::new(weight),
            bias: Param::new(bias),
            weight_gain: 1.0,
            in_channels,
            kernel,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn forward(&self, x: ArrayView4<T>) -> Array4<T> {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let col = im2col(x, self.kernel);
        let mut out = self.weight.value.dot(&col);
        let wg = T::of(self.weight_gain);
        for (mut row, &bias) in out.rows_mut().into_iter().zip(self.bias.value.iter()) {
            if self.weight_gain != 1.0 {
                row.mapv_inplace(|v| v * wg + bias);
            } else {
                row.mapv_inplace(|v| v + bias);
            }
        }
        channel_major_to_batch(out, b, h, w)
    }

    pub fn backward(&mut self, x: ArrayView4<T>, dy: ArrayView4<T>, param_grads: bool) -> Array4<T> {
        let (b, c, h, w) = x.dim();
        let dy2 = batch_to_channel_major(dy);
        let wg = T::of(self.weight_gain);
        if param_grads {
            let col = im2col(x, self.kernel);
            self.weight.grad.scaled_add(wg, &dy2.dot(&col.t()));
            self.bias.grad += &dy2.sum_axis(Axis(1)).insert_axis(Axis(0));
        }
        let mut dcol = self.weight.value.t().dot(&dy2);
        if self.weight_gain != 1.0 {
            dcol.mapv_inplace(|v| v * wg);
        }
        col2im(dcol.view(), (b, c, h, w), self.kernel)
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
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

/// `(out, b*h*w)` → `(b, out, h, w)`.
fn channel_major_to_batch<T: Scalar>(m: Array2<T>, b: usize, h: usize, w: usize) -> Array4<T> {
    let c = m.nrows();
    let m = m.into_shape_with_order((c, b, h, w)).expect("contiguous gemm output");
    if b == 1 {
        return m.into_shape_with_order((1, c, h, w)).expect("single batch reshape");
    }
    m.permuted_axes([1, 0, 2, 3]).as_standard_layout().into_owned()
}

/// `(b, c, h, w)` → `(c, b*h*w)`.
fn batch_to_channel_major<T: Scalar>(x: ArrayView4<T>) -> Array2<T> {
    let (b, c, h, w) = x.dim();
    x.permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, b * h * w))
        .expect("standard layout")
}

/// Unfolds `k×k` patches into columns: result is `(c*k*k, b*h*w)`.
pub fn im2col<T: Scalar>(x: ArrayView4<T>, k: usize) -> Array2<T> {
    let (b, c, h, w) = x.dim();
    let hw = h * w;
    let ncols = b * hw;
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    if k == 1 {
        let mut col = Array2::zeros((c, ncols));
        let dst = col.as_slice_mut().expect("fresh array");
        for ci in 0..c {
            for bi in 0..b {
                let from = (bi * c + ci) * hw;
                dst[ci * ncols + bi * hw..ci * ncols + (bi + 1) * hw]
                    .copy_from_slice(&src[from..from + hw]);
            }
        }
        return col;
    }
    let pad = (k / 2) as isize;
    let mut col = Array2::zeros((c * k * k, ncols));
    let dst = col.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let off_y = ky as isize - pad;
                let off_x = kx as isize - pad;
                let x0 = (-off_x).max(0) as usize;
                let x1 = (w as isize - off_x).min(w as isize).max(0) as usize;
                for bi in 0..b {
                    let plane = &src[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                    let out = &mut dst[row * ncols + bi * hw..row * ncols + (bi + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + off_y;
                        if sy < 0 || sy >= h as isize || x0 >= x1 {
                            continue;
                        }
                        let sy = sy as usize;
                        let sx0 = (x0 as isize + off_x) as usize;
                        out[y * w + x0..y * w + x1]
                            .copy_from_slice(&plane[sy * w + sx0..sy * w + sx0 + (x1 - x0)]);
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: folds columns back, summing overlapping patches.
pub fn col2im<T: Scalar>(col: ArrayView2<T>, shape: (usize, usize, usize, usize), k: usize) -> Array4<T> {
    let (b, c, h, w) = shape;
    let hw = h * w;
    let ncols = b * hw;
    assert_eq!(col.dim(), (c * k * k, ncols), "col2im shape");
    let col = col.as_standard_layout();
    let src = col.as_slice().expect("standard layout");
    let mut x = Array4::zeros(shape);
    let dst = x.as_slice_mut().expect("fresh array");
    let pad = (k / 2) as isize;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let off_y = ky as isize - pad;
                let off_x = kx as isize - pad;
                let x0 = (-off_x).max(0) as usize;
                let x1 = (w as isize - off_x).min(w as isize).max(0) as usize;
                for bi in 0..b {
                    let from = &src[row * ncols + bi * hw..row * ncols + (bi + 1) * hw];
                    let plane = &mut dst[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + off_y;
                        if sy < 0 || sy >= h as isize || x0 >= x1 {
                            continue;
                        }
                        let sy = sy as usize;
                        let sx0 = (x0 as isize + off_x) as usize;
                        let target = &mut plane[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        for (t, s) in target.iter_mut().zip(&from[y * w + x0..y * w + x1]) {
                            *t += *s;
                        }
                    }
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution.
    fn conv_naive(x: &Array4<f64>, conv: &Conv2d<f64>) -> Array4<f64> {
        let (b, c, h, w) = x.dim();
        let k = conv.kernel();
        let pad = (k / 2) as isize;
        let o = conv.out_channels();
        let mut y = Array4::zeros((b, o, h, w));
        for bi in 0..b {
            for oi in 0..o {
                for yy in 0..h {
                    for xx in 0..w {
                        let mut acc = conv.bias.value[[0, oi]];
                        let g = conv.weight_gain;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = yy as isize + ky as isize - pad;
                                    let sx = xx as isize + kx as isize - pad;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    acc += g * conv.weight.value[[oi, (ci * k + ky) * k + kx]]
                                        * x[[bi, ci, sy as usize, sx as usize]];
                                }
                            }
                        }
                        y[[bi, oi, yy, xx]] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn forward_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, b, eq) in &[(3, 2, false), (1, 3, false), (3, 1, true)] {
            let mut conv = if eq {
                Conv2d::<f64>::equalized(3, 4, k, 2f64.sqrt(), &mut rng)
            } else {
                Conv2d::<f64>::new(3, 4, k, 1.0, &mut rng)
            };
            conv.bias.value.mapv_inplace(|_| 0.25);
            let x = Array::from_shape_fn((b, 3, 5, 4), |(i, j, y, x)| {
                ((i * 7 + j * 5 + y * 3 + x) as f64 * 0.37).sin()
            });
            let fast = conv.forward(x.view());
            let slow = conv_naive(&x, &conv);
            for (a, e) in fast.iter().zip(slow.iter()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let x = Array::from_shape_fn((2, 2, 4, 3), |(a, b, c, d)| ((a + 2 * b + 3 * c + 5 * d) as f64).cos());
        let cols = im2col(x.view(), 3);
        let y = Array::from_shape_fn(cols.raw_dim(), |(i, j)| ((i * 31 + j * 7) as f64).sin());
        let lhs: f64 = (&cols * &y).sum();
        let rhs: f64 = (&x * &col2im(y.view(), x.dim(), 3)).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}

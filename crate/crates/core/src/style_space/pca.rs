//! Principal component analysis accumulated in `f64`.
//!
//! Uses the `n × n` centered kernel when samples are fewer than dimensions
//! (the usual case for Gram descriptors) and the `d × d` covariance otherwise.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, ArrayView2};

use crate::{Error, Result, Scalar};

/// Columns processed per block when streaming over wide data.
const BLOCK: usize = 4096;
/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

/// Eigenvalues of the scatter matrix, available before components are built.
pub(crate) struct Spectrum {
    /// Non-increasing, clamped ≥ 0.
    pub eigenvalues: Vec<f64>,
    /// Σ‖x_i − mean‖².
    pub total_scatter: f64,
}

impl Spectrum {
    pub fn numerical_rank(&self) -> usize {
        let top = self.eigenvalues.first().copied().unwrap_or(0.0);
        self.eigenvalues.iter().take_while(|&&l| l > top * RANK_TOL && l > 0.0).count()
    }
}

pub(crate) struct PrincipalBasis {
    pub mean: Array1<f64>,
    /// Leading unit components, one per row (zero rows beyond numerical rank).
    pub components: Array2<f64>,
}

fn column_means<T: Scalar>(data: ArrayView2<T>) -> Array1<f64> {
    let n = data.nrows() as f64;
    let mut mean = Array1::<f64>::zeros(data.ncols());
    for row in data.rows() {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v.as_f64();
        }
    }
    mean / n
}

fn centered_block<T: Scalar>(data: ArrayView2<T>, mean: &Array1<f64>, lo: usize, hi: usize) -> Array2<f64> {
    let block = data.slice(s![.., lo..hi]);
    let m = mean.slice(s![lo..hi]);
    let mut out = Array2::<f64>::zeros(block.raw_dim());
    for (mut o, row) in out.rows_mut().into_iter().zip(block.rows()) {
        for ((o, v), m) in o.iter_mut().zip(row.iter()).zip(m.iter()) {
            *o = v.as_f64() - m;
        }
    }
    out
}

fn sorted_eigen(sym: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Fixes the sign of each row so its largest-magnitude entry is positive.
fn canonical_signs(components: &mut Array2<f64>) {
    for mut row in components.rows_mut() {
        let pivot = row.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            row.mapv_inplace(|v| -v);
        }
    }
}

/// Computes principal directions of the rows of `data`; `select` sees the
/// spectrum and picks how many components to build.
pub(crate) fn principal_basis<T: Scalar>(
    data: ArrayView2<T>,
    select: impl FnOnce(&Spectrum) -> Result<usize>,
) -> Result<PrincipalBasis> {
    let (n, d) = data.dim();
    if n < 2 {
        return Err(Error::input(format!("PCA needs at least 2 samples, got {n}")));
    }
    if d == 0 {
        return Err(Error::input("PCA over zero-length descriptors"));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("descriptors contain non-finite values"));
    }
    let mean = column_means(data);
    let (_, mut components) = if n <= d {
        let mut kernel = Array2::<f64>::zeros((n, n));
        for lo in (0..d).step_by(BLOCK) {
            let hi = (lo + BLOCK).min(d);
            let xb = centered_block(data, &mean, lo, hi);
            kernel += &xb.dot(&xb.t());
        }
        let total = kernel.diag().sum();
        let sym = DMatrix::from_fn(n, n, |r, c| 0.5 * (kernel[[r, c]] + kernel[[c, r]]));
        let (values, vectors) = sorted_eigen(sym);
        let top = values[0];
        let spectrum = Spectrum {
            eigenvalues: values,
            total_scatter: total,
        };
        let max_k = select(&spectrum)?.min(n);
        let values = &spectrum.eigenvalues;
        // component_i = Xcᵀ u_i / sqrt(λ_i)
        let mut coeffs = Array2::<f64>::zeros((max_k, n));
        for i in 0..max_k {
            if values[i] > top * RANK_TOL && values[i] > 0.0 {
                let inv = 1.0 / values[i].sqrt();
                for j in 0..n {
                    coeffs[[i, j]] = vectors[(j, i)] * inv;
                }
            }
        }
        let mut comps = Array2::<f64>::zeros((max_k, d));
        for lo in (0..d).step_by(BLOCK) {
            let hi = (lo + BLOCK).min(d);
            let xb = centered_block(data, &mean, lo, hi);
            comps.slice_mut(s![.., lo..hi]).assign(&coeffs.dot(&xb));
        }
        (spectrum, comps)
    } else {
        let xc = centered_block(data, &mean, 0, d);
        let scatter = xc.t().dot(&xc);
        let total = scatter.diag().sum();
        let sym = DMatrix::from_fn(d, d, |r, c| 0.5 * (scatter[[r, c]] + scatter[[c, r]]));
        let (values, vectors) = sorted_eigen(sym);
        let top = values[0];
        let spectrum = Spectrum {
            eigenvalues: values,
            total_scatter: total,
        };
        let max_k = select(&spectrum)?.min(d);
        let values = &spectrum.eigenvalues;
        let comps = Array2::from_shape_fn((max_k, d), |(i, j)| {
            if values[i] > top * RANK_TOL && values[i] > 0.0 {
                vectors[(j, i)]
            } else {
                0.0
            }
        });
        (spectrum, comps)
    };
    canonical_signs(&mut components);
    Ok(PrincipalBasis { mean, components })
}

/// Largest per-entry deviation of `C Cᵀ` from the identity.
pub fn orthonormality_error<T: Scalar>(components: ArrayView2<T>) -> f64 {
    let c = components.mapv(|v| v.as_f64());
    let g = c.dot(&c.t());
    let mut worst = 0.0f64;
    for ((i, j), v) in g.indexed_iter() {
        let target = if i == j { 1.0 } else { 0.0 };
        worst = worst.max((v - target).abs());
    }
    worst
}

pub(crate) fn cumulative(ratios: &[f64]) -> Vec<f64> {
    ratios
        .iter()
        .scan(0.0, |acc, r| {
            *acc += r;
            Some(*acc)
        })
        .collect()
}

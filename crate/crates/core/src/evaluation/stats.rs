use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// Eigenvalues more negative than this (relative to the largest) are errors;
/// smaller negative values are numerical noise and count as zero.
const NEGATIVE_EIGEN_TOL: f64 = 1e-6;

/// Mean and covariance of a feature set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    mean: Array1<f64>,
    covariance: Array2<f64>,
    count: usize,
}

impl FeatureStats {
    /// Two-pass mean and unbiased covariance over the rows of `features`.
    pub fn from_rows<T: Scalar>(features: ArrayView2<T>) -> Result<Self> {
        let (n, d) = features.dim();
        if n < 2 {
            return Err(Error::input(format!("feature statistics need at least 2 samples, got {n}")));
        }
        if d == 0 {
            return Err(Error::input("feature vectors are empty"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("features contain non-finite values"));
        }
        let x = features.mapv(|v| v.as_f64());
        let mean = x.sum_axis(ndarray::Axis(0)) / n as f64;
        let centered = &x - &mean;
        let mut covariance = centered.t().dot(&centered) / (n - 1) as f64;
        symmetrize(&mut covariance);
        Ok(FeatureStats { mean, covariance, count: n })
    }

    pub fn from_parts(mean: Array1<f64>, covariance: Array2<f64>, count: usize) -> Result<Self> {
        let d = mean.len();
        if covariance.dim() != (d, d) {
            return Err(Error::input(format!("covariance is {:?}, mean has {d} entries", covariance.dim())));
        }
        if count < 2 {
            return Err(Error::input("feature statistics need a count of at least 2"));
        }
        let scale = covariance.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..d {
            for j in 0..i {
                if (covariance[[i, j]] - covariance[[j, i]]).abs() > 1e-9 * scale {
                    return Err(Error::input("covariance is not symmetric"));
                }
            }
        }
        Ok(FeatureStats { mean, covariance, count })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &Array2<f64> {
        &self.covariance
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

fn symmetrize(m: &mut Array2<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
}

fn to_dmatrix(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[[r, c]])
}

/// Eigenvalues of a symmetric PSD matrix with tiny negatives zeroed.
fn psd_eigen(m: DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let mut eig = SymmetricEigen::new(m);
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let tol = NEGATIVE_EIGEN_TOL * top.max(1.0);
    for l in eig.eigenvalues.iter_mut() {
        if !l.is_finite() {
            return Err(Error::numeric(format!("{what}: eigen-decomposition produced {l}")));
        }
        if *l < -tol {
            return Err(Error::numeric(format!("{what} is not positive semi-definite (eigenvalue {l:e})")));
        }
        *l = l.max(0.0);
    }
    Ok(eig)
}

/// `tr((Σa Σb)^{1/2})` through the symmetric form `Σa^{1/2} Σb Σa^{1/2}`.
fn trace_sqrt_product(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    let ea = psd_eigen(to_dmatrix(a), "first covariance")?;
    let roots = ea.eigenvalues.map(f64::sqrt);
    let sqrt_a = &ea.eigenvectors * DMatrix::from_diagonal(&roots) * ea.eigenvectors.transpose();
    let inner = &sqrt_a * to_dmatrix(b) * &sqrt_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let em = psd_eigen(inner, "covariance product")?;
    Ok(em.eigenvalues.iter().map(|l| l.sqrt()).sum())
}

/// Fréchet distance between two Gaussians, clamped at zero.
pub fn fid(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::input(format!("feature dims differ: {} vs {}", a.dim(), b.dim())));
    }
    let diff = &a.mean - &b.mean;
    let mean_term = diff.dot(&diff);
    let trace = a.covariance.diag().sum() + b.covariance.diag().sum();
    let cross = trace_sqrt_product(&a.covariance, &b.covariance)?;
    let raw = mean_term + trace - 2.0 * cross;
    if raw < 0.0 {
        log::warn!("fid clamped from {raw:e} to 0");
        return Ok(0.0);
    }
    Ok(raw)
}

/// On-disk cache of feature statistics keyed by a caller-supplied hash.
#[derive(Clone, Debug)]
pub struct StatsCache {
    dir: PathBuf,
}

impl StatsCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        StatsCache { dir: dir.into() }
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("stats-{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<FeatureStats> {
        let text = std::fs::read(self.path(key)).ok()?;
        serde_json::from_slice(&text).ok()
    }

    pub fn put(&self, key: &str, stats: &FeatureStats) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        serde_json::to_writer(tmp.as_file(), stats).map_err(|e| Error::format("feature stats", e))?;
        tmp.persist(self.path(key)).map_err(|e| Error::io(self.path(key), e.error))?;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn scalar_closed_form() {
        let a = FeatureStats::from_parts(array![0.0], array![[1.0]], 10).unwrap();
        let b = FeatureStats::from_parts(array![1.0], array![[4.0]], 10).unwrap();
        assert!((fid(&a, &b).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn indefinite_covariance_is_numeric_error() {
        let a = FeatureStats::from_parts(array![0.0, 0.0], array![[1.0, 0.0], [0.0, -1.0]], 3).unwrap();
        assert!(matches!(fid(&a, &a), Err(Error::Numeric(_))));
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = StatsCache::new(dir.path());
        let s = FeatureStats::from_parts(array![0.5, 1.0], array![[2.0, 0.1], [0.1, 1.0]], 7).unwrap();
        assert!(cache.get("k").is_none());
        cache.put("k", &s).unwrap();
        assert_eq!(cache.get("k").unwrap(), s);
    }
}

//! Continuous style space: PCA over Gram descriptors plus the operations
//! built on top of it (projection, 2-D view, interpolation, lookup, sampling).

mod pca;
mod store;

pub use pca::orthonormality_error;
pub use store::StyleStore;

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::gram::RawStyleDescriptor;
use crate::{Error, Result, Scalar};

/// How many principal components to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimPolicy {
    Explicit(usize),
    /// Smallest `k` retaining the variance target, capped at 512 and `n − 1`.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub policy: DimPolicy,
    pub min_variance: f64,
    pub max_auto_dim: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            policy: DimPolicy::Auto,
            min_variance: 0.99,
            max_auto_dim: 512,
        }
    }
}

impl FitOptions {
    pub fn explicit(k: usize) -> Self {
        FitOptions {
            policy: DimPolicy::Explicit(k),
            ..Self::default()
        }
    }
}

/// Per-dimension z-score applied to style vectors before they reach the
/// networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Standardization {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population statistics over the rows of `vectors`; zero spreads become 1.
    pub fn fit<T: Scalar>(vectors: ArrayView2<T>) -> Result<Self> {
        let n = vectors.nrows();
        if n == 0 {
            return Err(Error::input("standardization over an empty set"));
        }
        let v = vectors.mapv(|x| x.as_f64());
        let mean = v.mean_axis(Axis(0)).expect("non-empty");
        let std = v.var_axis(Axis(0), 0.0).mapv(|s| {
            let s = s.sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        });
        Ok(Standardization {
            mean: mean.to_vec(),
            std: std.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply<T: Scalar>(&self, v: ArrayView1<T>) -> Array1<T> {
        Array1::from_shape_fn(v.len(), |i| T::of((v[i].as_f64() - self.mean[i]) / self.std[i]))
    }

    pub fn apply_rows<T: Scalar>(&self, v: ArrayView2<T>) -> Array2<T> {
        Array2::from_shape_fn(v.dim(), |(r, i)| T::of((v[[r, i]].as_f64() - self.mean[i]) / self.std[i]))
    }

    pub fn invert<T: Scalar>(&self, z: ArrayView1<T>) -> Array1<T> {
        Array1::from_shape_fn(z.len(), |i| T::of(z[i].as_f64() * self.std[i] + self.mean[i]))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Provenance {
    Image(String),
    Interpolated,
    Sampled,
    Random,
    External,
}

/// A point `v` in the style space.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleVector<T> {
    pub values: Array1<T>,
    pub provenance: Provenance,
}

impl<T: Scalar> StyleVector<T> {
    pub fn new(values: Array1<T>, provenance: Provenance) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("style vector has non-finite entries"));
        }
        Ok(StyleVector { values, provenance })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn to_vec_f64(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.as_f64()).collect()
    }
}

/// Fitted PCA basis mapping raw descriptors to style vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel<T> {
    mean: Array1<T>,
    /// `k × d`, orthonormal rows.
    components: Array2<T>,
    variance_ratios: Vec<f64>,
    standardization: Standardization,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    k: usize,
    descriptor_dim: usize,
    variance_ratios: Vec<f64>,
    standardization: Standardization,
    dtype: String,
    byte_order: String,
    layout: String,
}

const MODEL_FORMAT: &str = "stylespace-embedding/1";

impl<T: Scalar> EmbeddingModel<T> {
    /// Fits PCA to the rows of `descriptors` (one descriptor per row).
    pub fn fit(descriptors: ArrayView2<T>, options: FitOptions) -> Result<Self> {
        let (n, d) = descriptors.dim();
        if n < 2 {
            return Err(Error::input(format!("fit needs at least 2 descriptors, got {n}")));
        }
        let k_cap = match options.policy {
            DimPolicy::Explicit(k) => {
                if k == 0 || k > d.min(n - 1) {
                    return Err(Error::input(format!(
                        "k = {k} must lie in 1..={} (descriptor dim {d}, {n} samples)",
                        d.min(n - 1)
                    )));
                }
                k
            }
            DimPolicy::Auto => options.max_auto_dim.min(n - 1).min(d),
        };
        let min_variance = options.min_variance;
        let mut ratios = Vec::new();
        let basis = pca::principal_basis(descriptors, |spectrum| {
            if spectrum.total_scatter <= 0.0 {
                return Err(Error::input("descriptors have zero variance"));
            }
            ratios = spectrum.eigenvalues.iter().map(|l| l / spectrum.total_scatter).collect();
            let cumulative = pca::cumulative(&ratios);
            let k = match options.policy {
                DimPolicy::Explicit(k) => k,
                DimPolicy::Auto => cumulative
                    .iter()
                    .take(k_cap)
                    .position(|&c| c >= min_variance - 1e-12)
                    .map(|i| i + 1)
                    .ok_or(Error::Variance {
                        achieved: cumulative[k_cap - 1],
                        required: min_variance,
                        k: k_cap,
                    })?,
            };
            let achieved = cumulative[k - 1];
            if achieved < min_variance - 1e-12 {
                return Err(Error::Variance {
                    achieved,
                    required: min_variance,
                    k,
                });
            }
            let rank = spectrum.numerical_rank();
            if k > rank {
                return Err(Error::input(format!("k = {k} exceeds the numerical rank {rank} of the descriptors")));
            }
            Ok(k)
        })?;
        let k = basis.components.nrows();
        let components = basis.components.mapv(T::of);
        let mean = basis.mean.mapv(T::of);
        let mut model = EmbeddingModel {
            mean,
            components,
            variance_ratios: ratios[..k].to_vec(),
            standardization: Standardization::identity(k),
        };
        let projected = model.project_rows(descriptors)?;
        model.standardization = Standardization::fit(projected.view())?;
        Ok(model)
    }

    pub fn fit_descriptors(descriptors: &[RawStyleDescriptor<T>], options: FitOptions) -> Result<Self> {
        let d = descriptors.first().map(|x| x.len()).unwrap_or(0);
        if descriptors.iter().any(|x| x.len() != d) {
            return Err(Error::input("descriptors differ in length"));
        }
        let mut data = Array2::zeros((descriptors.len(), d));
        for (mut row, x) in data.rows_mut().into_iter().zip(descriptors) {
            row.assign(&x.values);
        }
        Self::fit(data.view(), options)
    }

    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn descriptor_dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn mean(&self) -> ArrayView1<'_, T> {
        self.mean.view()
    }

    pub fn components(&self) -> ArrayView2<'_, T> {
        self.components.view()
    }

    pub fn variance_ratios(&self) -> &[f64] {
        &self.variance_ratios
    }

    pub fn explained_variance(&self) -> f64 {
        self.variance_ratios.iter().sum()
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    /// Replaces the z-score statistics, e.g. after projecting the full corpus.
    pub fn set_standardization(&mut self, stats: Standardization) -> Result<()> {
        if stats.dim() != self.k() {
            return Err(Error::input(format!("standardization dim {} ≠ k {}", stats.dim(), self.k())));
        }
        self.standardization = stats;
        Ok(())
    }

    /// `v = C (x − mean)`.
    pub fn project_values(&self, descriptor: ArrayView1<T>) -> Result<Array1<T>> {
        if descriptor.len() != self.descriptor_dim() {
            return Err(Error::input(format!(
                "descriptor length {} does not match model dimension {}",
                descriptor.len(),
                self.descriptor_dim()
            )));
        }
        let centered = &descriptor - &self.mean;
        Ok(self.components.dot(&centered))
    }

    pub fn project(&self, descriptor: &RawStyleDescriptor<T>) -> Result<StyleVector<T>> {
        let v = self.project_values(descriptor.values.view())?;
        StyleVector::new(v, Provenance::Image(descriptor.image_id.clone()))
    }

    pub fn project_rows(&self, descriptors: ArrayView2<T>) -> Result<Array2<T>> {
        if descriptors.ncols() != self.descriptor_dim() {
            return Err(Error::input("descriptor length does not match model"));
        }
        let centered = &descriptors - &self.mean.view().insert_axis(Axis(0));
        Ok(centered.dot(&self.components.t()))
    }

    /// `mean + Cᵀ v`.
    pub fn reconstruct(&self, v: ArrayView1<T>) -> Result<Array1<T>> {
        if v.len() != self.k() {
            return Err(Error::input(format!("style vector dim {} ≠ k {}", v.len(), self.k())));
        }
        Ok(self.components.t().dot(&v) + &self.mean)
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let (header, bytes) = self.to_parts();
        let json = stem.with_extension("json");
        let bin = stem.with_extension("bin");
        std::fs::write(&json, header).map_err(|e| Error::io(&json, e))?;
        std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let json = stem.with_extension("json");
        let bin = stem.with_extension("bin");
        let header = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        Self::from_parts(&header, &bytes)
    }

    /// JSON header and the `(1 + k) × d` little-endian `f32` matrix
    /// (mean row first, then components).
    pub fn to_parts(&self) -> (String, Vec<u8>) {
        let header = ModelHeader {
            format: MODEL_FORMAT.into(),
            k: self.k(),
            descriptor_dim: self.descriptor_dim(),
            variance_ratios: self.variance_ratios.clone(),
            standardization: self.standardization.clone(),
            dtype: "f32".into(),
            byte_order: "little".into(),
            layout: "row-major; row 0 = mean, rows 1..=k = components".into(),
        };
        let mut bytes = Vec::with_capacity((self.k() + 1) * self.descriptor_dim() * 4);
        for v in self.mean.iter().chain(self.components.iter()) {
            bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        (serde_json::to_string_pretty(&header).expect("header serializes"), bytes)
    }

    pub fn from_parts(header: &str, bytes: &[u8]) -> Result<Self> {
        let h: ModelHeader = serde_json::from_str(header).map_err(|e| Error::format("embedding header", e))?;
        if h.format != MODEL_FORMAT {
            return Err(Error::format("embedding header", format!("unsupported format {}", h.format)));
        }
        let expected = (h.k + 1) * h.descriptor_dim * 4;
        if bytes.len() != expected || h.variance_ratios.len() != h.k || h.standardization.dim() != h.k {
            return Err(Error::format(
                "embedding matrix",
                format!("{} bytes for k = {}, d = {}", bytes.len(), h.k, h.descriptor_dim),
            ));
        }
        let values: Vec<T> = bytes
            .chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        let all = Array2::from_shape_vec((h.k + 1, h.descriptor_dim), values).expect("length checked");
        Ok(EmbeddingModel {
            mean: all.row(0).to_owned(),
            components: all.slice(ndarray::s![1.., ..]).to_owned(),
            variance_ratios: h.variance_ratios,
            standardization: h.standardization,
        })
    }
}

/// Second-stage PCA of style vectors down to two coordinates for display.
/// Directions beyond the data's rank map to a zero coordinate.
pub fn project_2d<T: Scalar>(vectors: ArrayView2<T>) -> Result<Vec<[f64; 2]>> {
    let basis = pca::principal_basis(vectors, |_| Ok(2))?;
    let mut out = Vec::with_capacity(vectors.nrows());
    for row in vectors.rows() {
        let mut p = [0.0; 2];
        for (slot, comp) in p.iter_mut().zip(basis.components.rows()) {
            *slot = row
                .iter()
                .zip(comp.iter())
                .zip(basis.mean.iter())
                .map(|((x, c), m)| (x.as_f64() - m) * c)
                .sum();
        }
        out.push(p);
    }
    Ok(out)
}

/// Weighted combination `Σ w_i v_i`; weights must sum to one within 1e-6.
pub fn interpolate<T: Scalar>(vectors: &[StyleVector<T>], weights: &[f64]) -> Result<StyleVector<T>> {
    if vectors.is_empty() {
        return Err(Error::input("interpolate needs at least one vector"));
    }
    if vectors.len() != weights.len() {
        return Err(Error::input(format!("{} vectors but {} weights", vectors.len(), weights.len())));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::input("interpolation weights must be finite"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::input(format!("interpolation weights sum to {sum}, expected 1")));
    }
    let dim = vectors[0].dim();
    if vectors.iter().any(|v| v.dim() != dim) {
        return Err(Error::input("interpolated vectors differ in dimension"));
    }
    let mut acc = Array1::<T>::zeros(dim);
    for (v, &w) in vectors.iter().zip(weights) {
        acc.scaled_add(T::of(w), &v.values);
    }
    StyleVector::new(acc, Provenance::Interpolated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sv(values: Array1<f64>) -> StyleVector<f64> {
        StyleVector::new(values, Provenance::External).unwrap()
    }

    #[test]
    fn endpoint_weights_return_first_vector() {
        let a = sv(array![1.0, -2.0, 0.5]);
        let b = sv(array![3.0, 4.0, -1.0]);
        let mix = interpolate(&[a.clone(), b], &[1.0, 0.0]).unwrap();
        assert_eq!(mix.values, a.values);
        assert_eq!(mix.provenance, Provenance::Interpolated);
    }

    #[test]
    fn thirds_give_centroid() {
        let vs = [sv(array![3.0, 0.0]), sv(array![0.0, 3.0]), sv(array![0.0, 0.0])];
        let w = [1.0 / 3.0; 3];
        let mix = interpolate(&vs, &w).unwrap();
        assert!((mix.values[0] - 1.0).abs() < 1e-12 && (mix.values[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weight_sum_violation_rejected() {
        let vs = [sv(array![1.0]), sv(array![2.0])];
        assert!(matches!(interpolate(&vs, &[0.5, 0.4]), Err(Error::Input(_))));
        assert!(interpolate(&vs, &[0.5, f64::NAN]).is_err());
        assert!(interpolate(&vs, &[1.0]).is_err());
    }

    #[test]
    fn extrapolation_allowed() {
        let vs = [sv(array![1.0]), sv(array![2.0])];
        let mix = interpolate(&vs, &[2.0, -1.0]).unwrap();
        assert!((mix.values[0] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_style_vector_rejected() {
        assert!(StyleVector::new(array![f64::INFINITY], Provenance::External).is_err());
    }

    #[test]
    fn fit_rejects_tiny_inputs() {
        let one = Array2::<f64>::zeros((1, 4));
        assert!(matches!(EmbeddingModel::fit(one.view(), FitOptions::default()), Err(Error::Input(_))));
        let constant = Array2::<f64>::ones((5, 4));
        assert!(EmbeddingModel::fit(constant.view(), FitOptions::default()).is_err());
    }

    #[test]
    fn explicit_k_bounds() {
        let data = Array2::from_shape_fn((4, 6), |(i, j)| ((i * 7 + j * 3) % 5) as f64);
        assert!(EmbeddingModel::fit(data.view(), FitOptions::explicit(4)).is_err());
        assert!(EmbeddingModel::fit(data.view(), FitOptions::explicit(0)).is_err());
    }

    #[test]
    fn variance_error_names_achieved_ratio() {
        // isotropic data in 10 dims, only 3 components allowed
        let data = Array2::from_shape_fn((40, 10), |(i, j)| if i % 10 == j { if i < 20 { 1.0 } else { -1.0 } } else { 0.0 });
        let err = EmbeddingModel::fit(data.view(), FitOptions::explicit(3)).unwrap_err();
        match err {
            Error::Variance { achieved, k, .. } => {
                assert_eq!(k, 3);
                assert!(achieved < 0.99 && achieved > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        let auto = FitOptions {
            max_auto_dim: 5,
            ..FitOptions::default()
        };
        assert!(matches!(EmbeddingModel::fit(data.view(), auto), Err(Error::Variance { .. })));
    }

    #[test]
    fn persistence_round_trip() {
        let data = Array2::from_shape_fn((6, 5), |(i, j)| ((i + 1) * (j + 2)) as f64 + (i * j % 3) as f64);
        let model = EmbeddingModel::<f64>::fit(data.view(), FitOptions::explicit(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        model.save(&stem).unwrap();
        let back = EmbeddingModel::<f64>::load(&stem).unwrap();
        assert_eq!(back.k(), 2);
        assert_eq!(back.standardization(), model.standardization());
        for (a, b) in back.components().iter().zip(model.components().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(EmbeddingModel::<f64>::from_parts("{}", &[]).is_err());
    }
}

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

pub const MIN_IMAGES: usize = 20;
pub const MIN_STYLES: usize = 5;

/// Average ranks (ties share the mean of their positions), starting at 1.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Spearman rank correlation; a constant input correlates at 0.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::input(format!("spearman needs two equal series of ≥ 2 values, got {} and {}", a.len(), b.len())));
    }
    Ok(pearson(&ranks(a), &ranks(b)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    /// Mean of `per_dim`.
    pub rank_correlation: f64,
    /// Spearman correlation between target and recovered coordinates for each
    /// leading style dimension.
    pub per_dim: Vec<f64>,
    /// Share of images whose recovered vector is nearest to its own target
    /// among all distinct targets.
    pub centroid_accuracy: f64,
    pub images: usize,
    pub styles: usize,
}

/// Compares target style vectors with the vectors recovered from the images
/// generated for them. Rows correspond; `dims` leading coordinates enter the
/// rank correlation.
pub fn fidelity_from_vectors<T: Scalar>(
    targets: ArrayView2<T>,
    recovered: ArrayView2<T>,
    dims: usize,
) -> Result<FidelityReport> {
    let (n, k) = targets.dim();
    if recovered.dim() != (n, k) {
        return Err(Error::input(format!(
            "targets are {n}×{k} but recovered vectors are {:?}",
            recovered.dim()
        )));
    }
    if n < MIN_IMAGES {
        return Err(Error::input(format!("style fidelity needs ≥ {MIN_IMAGES} images, got {n}")));
    }
    let t = targets.mapv(|v| v.as_f64());
    let r = recovered.mapv(|v| v.as_f64());
    let mut classes: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::with_capacity(n);
    for row in t.rows() {
        let row = row.to_vec();
        let label = match classes.iter().position(|c| *c == row) {
            Some(i) => i,
            None => {
                classes.push(row);
                classes.len() - 1
            }
        };
        labels.push(label);
    }
    if classes.len() < MIN_STYLES {
        return Err(Error::input(format!(
            "style fidelity needs targets from ≥ {MIN_STYLES} distinct styles, got {}",
            classes.len()
        )));
    }
    let dims = dims.clamp(1, k);
    let per_dim = (0..dims)
        .map(|d| spearman(&t.column(d).to_vec(), &r.column(d).to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let centroids = Array2::from_shape_fn((classes.len(), k), |(c, j)| classes[c][j]);
    let correct = r
        .rows()
        .into_iter()
        .zip(&labels)
        .filter(|(row, &label)| {
            let dist = |c: usize| {
                centroids
                    .row(c)
                    .iter()
                    .zip(row.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            };
            (0..classes.len()).min_by(|&a, &b| dist(a).total_cmp(&dist(b))) == Some(label)
        })
        .count();
    Ok(FidelityReport {
        rank_correlation: per_dim.iter().sum::<f64>() / per_dim.len() as f64,
        per_dim,
        centroid_accuracy: correct as f64 / n as f64,
        images: n,
        styles: classes.len(),
    })
}

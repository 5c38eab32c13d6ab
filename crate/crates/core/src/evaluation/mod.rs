//! Sample quality (Fréchet distance over proxy features) and conditioning
//! fidelity of trained generators.

mod fidelity;
mod stats;

pub use fidelity::{fidelity_from_vectors, ranks, spearman, FidelityReport, MIN_IMAGES, MIN_STYLES};
pub use stats::{fid, FeatureStats, StatsCache};

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::generator::{latents_from_seeds, StyleGenerator};
use crate::gram::GramExtractor;
use crate::imaging::Raster;
use crate::style_space::{EmbeddingModel, StyleStore};
use crate::training::{Checkpoint, Variant};
use crate::{Error, Result, Scalar};

/// Feature embedding for the Fréchet distance: per-channel means of every
/// tapped layer of the style backbone.
pub struct ProxyFeatures<'a, T: Scalar> {
    extractor: &'a GramExtractor<T>,
}

impl<'a, T: Scalar> ProxyFeatures<'a, T> {
    pub fn new(extractor: &'a GramExtractor<T>) -> Self {
        ProxyFeatures { extractor }
    }

    pub fn dim(&self) -> usize {
        self.extractor.backbone().config().widths.iter().sum()
    }

    pub fn features(&self, images: &[Raster]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((images.len(), self.dim()));
        for (mut row, img) in out.rows_mut().into_iter().zip(images) {
            let pooled = self.extractor.extract_activations(img)?.pooled();
            row.assign(&pooled.mapv(|v| v.as_f64()));
        }
        Ok(out)
    }

    pub fn stats(&self, images: &[Raster]) -> Result<FeatureStats> {
        FeatureStats::from_rows(self.features(images)?.view())
    }

    /// Cache key for the statistics of `images` under this extractor.
    pub fn cache_key(&self, images: &[Raster]) -> String {
        let mut h = Sha256::new();
        h.update(self.extractor.fingerprint().as_bytes());
        for img in images {
            h.update((img.height() as u64).to_le_bytes());
            for p in img.pixels().iter() {
                h.update(p.to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }

    /// Statistics of `images`, read from or written to `cache` when given.
    pub fn cached_stats(&self, images: &[Raster], cache: Option<&StatsCache>) -> Result<FeatureStats> {
        let key = cache.map(|_| self.cache_key(images));
        if let (Some(c), Some(k)) = (cache, &key) {
            if let Some(stats) = c.get(k) {
                return Ok(stats);
            }
        }
        let stats = self.stats(images)?;
        if let (Some(c), Some(k)) = (cache, &key) {
            c.put(k, &stats)?;
        }
        Ok(stats)
    }
}

/// Standardized style vector of an image.
pub fn embed_image<T: Scalar>(extractor: &GramExtractor<T>, model: &EmbeddingModel<T>, image: &Raster) -> Result<Vec<T>> {
    let descriptor = extractor.gram_descriptor("", image)?;
    let v = model.project_values(descriptor.values.view())?;
    Ok(model.standardization().apply(v.view()).to_vec())
}

/// Re-embeds every image; rows follow `images`.
pub fn embed_images<T: Scalar>(
    extractor: &GramExtractor<T>,
    model: &EmbeddingModel<T>,
    images: &[Raster],
) -> Result<Array2<T>> {
    let mut out = Array2::zeros((images.len(), model.k()));
    for (mut row, img) in out.rows_mut().into_iter().zip(images) {
        row.assign(&ndarray::Array1::from(embed_image(extractor, model, img)?));
    }
    Ok(out)
}

/// Re-embeds generated images and scores them against their targets.
pub fn style_fidelity<T: Scalar>(
    images: &[Raster],
    targets: ArrayView2<T>,
    extractor: &GramExtractor<T>,
    model: &EmbeddingModel<T>,
    dims: usize,
) -> Result<FidelityReport> {
    if images.len() != targets.nrows() {
        return Err(Error::input(format!("{} images for {} targets", images.len(), targets.nrows())));
    }
    let recovered = embed_images(extractor, model, images)?;
    fidelity_from_vectors(targets, recovered.view(), dims)
}

/// Greedy farthest-point selection of `count` rows of `store`, starting from
/// the row farthest from the mean.
pub fn spread_styles<T: Scalar>(store: &StyleStore<T>, count: usize) -> Result<Vec<usize>> {
    let n = store.len();
    if count == 0 || count > n {
        return Err(Error::input(format!("cannot pick {count} of {n} styles")));
    }
    let v = store.vectors().mapv(|x| x.as_f64());
    let mean = v.mean_axis(Axis(0)).expect("store is non-empty");
    let dist = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    let first = (0..n)
        .max_by(|&a, &b| dist(v.row(a), mean.view()).total_cmp(&dist(v.row(b), mean.view())))
        .expect("non-empty");
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist(v.row(i), v.row(first))).collect();
    while chosen.len() < count {
        let next = (0..n)
            .max_by(|&a, &b| nearest[a].total_cmp(&nearest[b]))
            .expect("non-empty");
        chosen.push(next);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist(v.row(i), v.row(next)));
        }
    }
    Ok(chosen)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    /// Generated images entering the Fréchet distance.
    pub fid_samples: usize,
    pub fidelity_styles: usize,
    pub fidelity_per_style: usize,
    pub fidelity_dims: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            fid_samples: 5000,
            fidelity_styles: 8,
            fidelity_per_style: 25,
            fidelity_dims: 3,
            seed: 0,
        }
    }
}

/// Style rows for `count` fakes, drawn uniformly from `store`.
fn sampled_styles<T: Scalar>(store: &StyleStore<T>, count: usize, seed: u64) -> Result<Array2<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Array2::zeros((count, store.dim()));
    for mut row in v.rows_mut() {
        row.assign(&store.row(rng.random_range(0..store.len())));
    }
    Ok(v)
}

/// Fréchet distance between generated samples and `reference`. Conditioned
/// generators draw their style vectors uniformly from `styles`.
pub fn fid_proxy<T: Scalar>(
    generator: &StyleGenerator<T>,
    styles: Option<&StyleStore<T>>,
    features: &ProxyFeatures<T>,
    reference: &FeatureStats,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let z = latents_from_seeds::<T>(generator.config().latent_dim, seed, samples);
    let v = match (generator.is_conditioned(), styles) {
        (false, _) => None,
        (true, Some(store)) => Some(sampled_styles(store, samples, seed ^ 0x5eed)?),
        (true, None) => return Err(Error::input("conditioned generator needs a style store for fid_proxy")),
    };
    let mut rows = Array2::zeros((samples, features.dim()));
    // bounded memory: render and featurize in chunks
    const CHUNK: usize = 64;
    for lo in (0..samples).step_by(CHUNK) {
        let hi = (lo + CHUNK).min(samples);
        let zs = z.slice(ndarray::s![lo..hi, ..]);
        let vs = v.as_ref().map(|v| v.slice(ndarray::s![lo..hi, ..]));
        let images = generator.render(zs, vs)?;
        rows.slice_mut(ndarray::s![lo..hi, ..]).assign(&features.features(&images)?);
    }
    fid(&FeatureStats::from_rows(rows.view())?, reference)
}

/// Generates `per_style` images for each chosen target and scores control.
pub fn generated_fidelity<T: Scalar>(
    generator: &StyleGenerator<T>,
    targets: &StyleStore<T>,
    target_rows: &[usize],
    extractor: &GramExtractor<T>,
    model: &EmbeddingModel<T>,
    settings: &EvalSettings,
) -> Result<FidelityReport> {
    let n = target_rows.len() * settings.fidelity_per_style;
    let mut v = Array2::zeros((n, targets.dim()));
    for (i, mut row) in v.rows_mut().into_iter().enumerate() {
        row.assign(&targets.row(target_rows[i % target_rows.len()]));
    }
    let z = latents_from_seeds::<T>(generator.config().latent_dim, settings.seed.wrapping_add(1 << 32), n);
    let images = generator.render(z.view(), Some(v.view()))?;
    style_fidelity(&images, v.view(), extractor, model, settings.fidelity_dims)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantEval {
    pub variant: Variant,
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub fid_proxy: f64,
    /// Absent for the unconditional variant.
    pub fidelity: Option<FidelityReport>,
}

/// Scores one checkpoint against reference statistics of its training data.
pub fn evaluate_checkpoint<T: Scalar>(
    checkpoint: &Checkpoint<T>,
    extractor: &GramExtractor<T>,
    reference: &FeatureStats,
    settings: &EvalSettings,
) -> Result<VariantEval> {
    let features = ProxyFeatures::new(extractor);
    let styles = checkpoint.styles.as_ref();
    let fid_styles = match checkpoint.config.variant {
        Variant::RandomStyle => checkpoint.conditioning.as_ref().or(styles),
        _ => styles,
    };
    let fid_value = fid_proxy(
        &checkpoint.generator,
        fid_styles,
        &features,
        reference,
        settings.fid_samples,
        settings.seed,
    )?;
    let fidelity = match (checkpoint.generator.is_conditioned(), styles, &checkpoint.embedding) {
        (true, Some(store), Some(model)) => {
            let rows = spread_styles(store, settings.fidelity_styles)?;
            Some(generated_fidelity(&checkpoint.generator, store, &rows, extractor, model, settings)?)
        }
        _ => None,
    };
    Ok(VariantEval {
        variant: checkpoint.config.variant,
        seed: checkpoint.config.seed,
        dataset_fingerprint: checkpoint.dataset_fingerprint.clone(),
        fid_proxy: fid_value,
        fidelity,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub runs: usize,
    pub fid_proxy_median: f64,
    pub fid_proxy_values: Vec<f64>,
    pub rank_correlation_median: Option<f64>,
    pub centroid_accuracy_median: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub variants: Vec<VariantSummary>,
    /// `fid_proxy(controlled) − fid_proxy(vanilla)` over medians; negative
    /// means the controlled model scores better.
    pub controlled_minus_vanilla: Option<f64>,
    pub controlled_minus_concat: Option<f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Aggregates per-run scores by variant (medians over seeds).
pub fn compare_variants(runs: &[VariantEval]) -> Result<ComparisonReport> {
    let first = runs.first().ok_or_else(|| Error::input("no runs to compare"))?;
    if let Some(other) = runs.iter().find(|r| r.dataset_fingerprint != first.dataset_fingerprint) {
        return Err(Error::input(format!(
            "runs were trained on different datasets ({} seed {} vs {} seed {})",
            first.variant, first.seed, other.variant, other.seed
        )));
    }
    let mut groups: BTreeMap<usize, Vec<&VariantEval>> = BTreeMap::new();
    for r in runs {
        let order = Variant::ALL.iter().position(|v| *v == r.variant).expect("known variant");
        groups.entry(order).or_default().push(r);
    }
    let variants: Vec<VariantSummary> = groups
        .into_iter()
        .map(|(order, rs)| {
            let fids: Vec<f64> = rs.iter().map(|r| r.fid_proxy).collect();
            let rho: Vec<f64> = rs.iter().filter_map(|r| r.fidelity.as_ref().map(|f| f.rank_correlation)).collect();
            let acc: Vec<f64> = rs.iter().filter_map(|r| r.fidelity.as_ref().map(|f| f.centroid_accuracy)).collect();
            VariantSummary {
                variant: Variant::ALL[order],
                runs: rs.len(),
                fid_proxy_median: median(&fids).expect("group is non-empty"),
                fid_proxy_values: fids,
                rank_correlation_median: median(&rho),
                centroid_accuracy_median: median(&acc),
            }
        })
        .collect();
    let fid_of = |v: Variant| variants.iter().find(|s| s.variant == v).map(|s| s.fid_proxy_median);
    let delta = |other: Variant| Some(fid_of(Variant::Controlled)? - fid_of(other)?);
    Ok(ComparisonReport {
        controlled_minus_vanilla: delta(Variant::Vanilla),
        controlled_minus_concat: delta(Variant::ConcatDisc),
        variants,
    })
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
        let mut out = format!(
            "{:<14} {:>5} {:>12} {:>10} {:>10}\n",
            "variant", "runs", "fid_proxy", "rank_corr", "accuracy"
        );
        for s in &self.variants {
            out.push_str(&format!(
                "{:<14} {:>5} {:>12.4} {:>10} {:>10}\n",
                s.variant.name(),
                s.runs,
                s.fid_proxy_median,
                opt(s.rank_correlation_median),
                opt(s.centroid_accuracy_median)
            ));
        }
        if let Some(d) = self.controlled_minus_vanilla {
            out.push_str(&format!("controlled - vanilla fid_proxy: {d:+.4} ** {}\n", if d <= 0.0 { "controlled better" } else { "vanilla better" }));
        }
        if let Some(d) = self.controlled_minus_concat {
            out.push_str(&format!("controlled - concat_disc fid_proxy: {d:+.4}\n"));
        }
        out
    }
}

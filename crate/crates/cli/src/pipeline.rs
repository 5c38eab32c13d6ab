//! Image folder to style space: descriptor extraction, PCA fit, projection.

use std::path::Path;

use log::info;
use ndarray::Array2;
use stylespace_core::gram::{DescriptorArchive, DescriptorCache, DescriptorWriter};
use stylespace_core::gram::{GramExtractor, RawStyleDescriptor};
use stylespace_core::imaging::Raster;
use stylespace_core::style_space::{EmbeddingModel, FitOptions, Standardization, StyleStore};
use stylespace_core::{Error, Result};

use crate::manifest::DatasetManifest;

pub const DESCRIPTORS: &str = "descriptors";
pub const MODEL: &str = "embedding";
pub const STYLES: &str = "styles.json";

#[derive(Clone, Debug)]
pub struct EmbedOptions {
    /// Upper bound on the images entering the PCA fit; larger sets are
    /// subsampled at even spacing and projected afterwards.
    pub fit_limit: usize,
    pub fit: FitOptions,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        EmbedOptions {
            fit_limit: 512,
            fit: FitOptions::default(),
        }
    }
}

/// A fitted style space together with the training images' vectors.
#[derive(Clone, Debug)]
pub struct Embedded {
    pub model: EmbeddingModel<f32>,
    pub styles: StyleStore<f32>,
}

impl Embedded {
    pub fn load(dir: &Path) -> Result<Self> {
        let model = EmbeddingModel::load(&dir.join(MODEL))?;
        let styles = StyleStore::load(&dir.join(STYLES))?;
        if styles.dim() != model.k() {
            return Err(Error::format(
                "embedding directory",
                format!("styles have dimension {}, model k = {}", styles.dim(), model.k()),
            ));
        }
        Ok(Embedded { model, styles })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.model.save(&dir.join(MODEL))?;
        self.styles.save(&dir.join(STYLES))
    }
}

fn fit_rows(n: usize, limit: usize) -> Vec<usize> {
    if n <= limit {
        (0..n).collect()
    } else {
        (0..limit).map(|i| i * n / limit).collect()
    }
}

/// Extracts one descriptor per manifest image into `out/descriptors.*`,
/// reusing entries of `cache` when present.
pub fn extract_descriptors(
    manifest: &DatasetManifest,
    extractor: &GramExtractor<f32>,
    out: &Path,
    cache: Option<&DescriptorCache>,
) -> Result<DescriptorArchive> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let fingerprint = extractor.fingerprint();
    let len = extractor.descriptor_len();
    let mut writer = DescriptorWriter::create(
        &out.join(DESCRIPTORS),
        len,
        manifest.preprocess.clone(),
        &fingerprint,
    )?;
    let (mut hits, total) = (0, manifest.len());
    for (i, entry) in manifest.images.iter().enumerate() {
        let path = manifest.path_of(entry);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let cached = cache.and_then(|c| c.get(&fingerprint, &bytes, len));
        let descriptor = match cached {
            Some(values) => {
                hits += 1;
                RawStyleDescriptor {
                    image_id: entry.id.clone(),
                    values,
                }
            }
            None => {
                let image = Raster::decode(&bytes).map_err(|e| Error::input(format!("{}: {e}", entry.id)))?;
                let d = extractor.gram_descriptor(&entry.id, &image)?;
                if let Some(c) = cache {
                    c.put(&fingerprint, &bytes, &d.values)?;
                }
                d
            }
        };
        writer.push(&descriptor)?;
        if (i + 1) % 100 == 0 {
            info!("descriptors {}/{total}", i + 1);
        }
    }
    if cache.is_some() {
        info!("descriptor cache hits: {hits}/{total}");
    }
    writer.finish()
}

/// Fits the style space on `archive` and projects every row.
pub fn fit_archive(archive: &DescriptorArchive, options: &EmbedOptions) -> Result<Embedded> {
    let n = archive.rows();
    if n < 2 {
        return Err(Error::input(format!("embedding needs at least 2 images, got {n}")));
    }
    let subset = fit_rows(n, options.fit_limit.max(2));
    info!("fitting PCA on {} of {n} descriptors", subset.len());
    let fit_data = archive.read_rows::<f32>(&subset)?;
    let mut model = EmbeddingModel::fit(fit_data.view(), options.fit)?;
    drop(fit_data);
    let mut raw = Array2::<f32>::zeros((n, model.k()));
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(64) {
        let rows = archive.read_rows::<f32>(chunk)?;
        let projected = model.project_rows(rows.view())?;
        for (j, &i) in chunk.iter().enumerate() {
            raw.row_mut(i).assign(&projected.row(j));
        }
    }
    let standardization = Standardization::fit(raw.view())?;
    model.set_standardization(standardization)?;
    let vectors = model.standardization().apply_rows(raw.view());
    let styles = StyleStore::new(archive.sidecar().image_ids.clone(), vectors)?;
    info!("style space: k = {}, explained variance {:.4}", model.k(), model.explained_variance());
    Ok(Embedded { model, styles })
}

/// The full embed command: descriptors, model and style vectors under `out`.
pub fn embed(manifest: &DatasetManifest, out: &Path, options: &EmbedOptions) -> Result<Embedded> {
    let extractor = GramExtractor::<f32>::load(&manifest.backbone, manifest.preprocess.clone())?;
    let cache = DescriptorCache::from_env()?;
    let archive = extract_descriptors(manifest, &extractor, out, cache.as_ref())?;
    let embedded = fit_archive(&archive, options)?;
    embedded.save(out)?;
    Ok(embedded)
}

//! One function per subcommand; `main` only parses flags and maps errors to
//! exit codes.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use log::info;
use stylespace_core::evaluation::{
    compare_variants, evaluate_checkpoint, ComparisonReport, EvalSettings, ProxyFeatures, StatsCache,
};
use stylespace_core::gram::DescriptorCache;
use stylespace_core::gram::GramExtractor;
use stylespace_core::imaging::Raster;
use stylespace_core::style_space::{DimPolicy, StyleStore};
use stylespace_core::training::{Checkpoint, Trainer, TrainingConfig, TrainingSet, Variant};
use stylespace_core::{Error, Result};

use crate::manifest::DatasetManifest;
use crate::pipeline::{self, EmbedOptions, Embedded};
use crate::service::{self, EmbeddingResponse, GenerateRequest, GenerateResponse, MixSpec, RequestError, StyleSpec, Studio};

/// Failure of a subcommand, carrying its exit status.
#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Request(#[from] RequestError),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Core(e) => e.exit_code(),
            CommandError::Request(e) => e.exit_code(),
        }
    }
}

pub type CommandResult<T> = std::result::Result<T, CommandError>;

fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<S: serde::de::DeserializeOwned>(path: &Path, what: &'static str) -> Result<S> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(what, format!("{}: {e}", path.display())))
}

pub fn synth(out: &Path, count: usize, size: usize, seed: u64) -> CommandResult<()> {
    if count == 0 {
        return Err(Error::input("count must be positive").into());
    }
    let manifest = crate::manifest::write_synthetic(out, count, size, seed)?;
    info!("wrote {} images and {}", manifest.len(), out.join("manifest.json").display());
    Ok(())
}

pub fn embed(manifest: &Path, out: &Path, fit_limit: usize, dims: Option<usize>) -> CommandResult<Embedded> {
    let manifest = DatasetManifest::load(manifest)?;
    let mut options = EmbedOptions {
        fit_limit,
        ..EmbedOptions::default()
    };
    if let Some(k) = dims {
        options.fit.policy = DimPolicy::Explicit(k);
    }
    Ok(pipeline::embed(&manifest, out, &options)?)
}

/// Manifest images at `resolution`, paired with their stored vectors.
pub fn training_set(
    manifest: &DatasetManifest,
    resolution: usize,
    styles: Option<&StyleStore<f32>>,
) -> Result<TrainingSet<f32>> {
    let rasters: Vec<Raster> = manifest
        .load_images()?
        .into_iter()
        .map(|r| {
            if r.height() == resolution && r.width() == resolution {
                r
            } else {
                r.resized(resolution, resolution)
            }
        })
        .collect();
    let ids = manifest.ids();
    let styles = match styles {
        Some(store) => {
            let missing: Vec<&String> = ids.iter().filter(|id| store.index_of(id).is_none()).collect();
            if !missing.is_empty() {
                return Err(Error::input(format!(
                    "{} image(s) have no style vector, e.g. {}",
                    missing.len(),
                    missing.iter().take(5).map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
                )));
            }
            let mut v = ndarray::Array2::zeros((ids.len(), store.dim()));
            for (mut row, id) in v.rows_mut().into_iter().zip(&ids) {
                row.assign(&store.row(store.index_of(id).expect("checked above")));
            }
            Some(StyleStore::new(ids.clone(), v)?)
        }
        None => None,
    };
    TrainingSet::from_rasters(ids, &rasters, styles)
}

pub struct TrainArgs<'a> {
    pub config: Option<&'a Path>,
    pub manifest: &'a Path,
    pub embedding: Option<&'a Path>,
    pub out: &'a Path,
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
}

pub fn train(args: TrainArgs<'_>) -> CommandResult<Checkpoint<f32>> {
    let mut config = match args.config {
        Some(p) => TrainingConfig::load(p)?,
        None => TrainingConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(variant) = args.variant {
        config.variant = variant;
    }
    config.validate()?;
    let manifest = DatasetManifest::load(args.manifest)?;
    let embedded = args.embedding.map(Embedded::load).transpose()?;
    if config.variant.needs_embedding() && embedded.is_none() {
        return Err(Error::input(format!("variant {} needs --embedding", config.variant)).into());
    }
    let set = training_set(&manifest, config.resolution, embedded.as_ref().map(|e| &e.styles))?;
    info!("training {} on {} images for {} steps", config.variant, set.len(), config.steps);
    let mut trainer = Trainer::new(config, set, embedded.map(|e| e.model))?;
    let started = std::time::Instant::now();
    trainer.run(Some(args.out), |_, s| {
        info!(
            "step {} L_D {:.4} L_G {:.4}{} ({:.1}s)",
            s.step,
            s.d_loss,
            s.g_loss,
            s.r1.map(|r| format!(" R1 {r:.4}")).unwrap_or_default(),
            started.elapsed().as_secs_f64()
        )
    })?;
    Ok(trainer.checkpoint())
}

/// Style source flags of `generate`; at most one may be set.
#[derive(Clone, Debug, Default)]
pub struct StyleFlags {
    pub image_id: Option<String>,
    pub vector: Option<PathBuf>,
    pub interpolate: Option<PathBuf>,
}

impl StyleFlags {
    pub fn to_spec(&self) -> Result<Option<StyleSpec>> {
        let given = [self.image_id.is_some(), self.vector.is_some(), self.interpolate.is_some()];
        if given.iter().filter(|g| **g).count() > 1 {
            return Err(Error::input("give at most one of --image-id, --vector, --interpolate"));
        }
        if let Some(id) = &self.image_id {
            return Ok(Some(StyleSpec::ImageId(id.clone())));
        }
        if let Some(p) = &self.vector {
            return Ok(Some(StyleSpec::Vector(read_json(p, "style vector file")?)));
        }
        if let Some(p) = &self.interpolate {
            return Ok(Some(StyleSpec::Mix(read_json::<MixSpec>(p, "interpolation spec")?)));
        }
        Ok(None)
    }
}

/// Writes the grid to `out` and the full response (per-image PNGs and the
/// conditioning vector) next to it as JSON.
pub fn generate(checkpoint: &Path, style: &StyleFlags, seed: u64, count: usize, out: &Path) -> CommandResult<GenerateResponse> {
    let studio = Studio::open(checkpoint)?;
    let request = GenerateRequest {
        style: style.to_spec()?,
        z_seed: seed,
        count,
    };
    let response = studio.generate(&request)?;
    let tiles = response
        .png_bytes()?
        .iter()
        .map(|b| Raster::decode(b))
        .collect::<Result<Vec<_>>>()?;
    let grid = service::grid_png(&tiles)?;
    std::fs::write(out, grid).map_err(|e| Error::io(out, e))?;
    write_json(&out.with_extension("json"), &response)?;
    Ok(response)
}

pub fn evaluate(
    checkpoints: &[PathBuf],
    manifest: &Path,
    settings: EvalSettings,
    out: Option<&Path>,
) -> CommandResult<ComparisonReport> {
    if checkpoints.is_empty() {
        return Err(Error::input("evaluate needs at least one --checkpoint").into());
    }
    let manifest = DatasetManifest::load(manifest)?;
    let extractor = GramExtractor::<f32>::load(&manifest.backbone, manifest.preprocess.clone())?;
    let images = manifest.load_images()?;
    let cache = DescriptorCache::from_env()?.map(|c| StatsCache::new(c.dir().join("stats")));
    let mut runs = Vec::new();
    let mut reference = None;
    for path in checkpoints {
        let ck = Checkpoint::<f32>::load(path)?;
        let r = ck.generator.resolution();
        let reference = match &reference {
            Some((res, stats)) if *res == r => stats,
            _ => {
                let resized: Vec<Raster> = images.iter().map(|i| i.resized(r, r)).collect();
                let stats = ProxyFeatures::new(&extractor).cached_stats(&resized, cache.as_ref())?;
                &reference.insert((r, stats)).1
            }
        };
        let eval = evaluate_checkpoint(&ck, &extractor, reference, &settings)?;
        info!("{} seed {}: fid_proxy {:.4}", eval.variant, eval.seed, eval.fid_proxy);
        runs.push(eval);
    }
    let report = compare_variants(&runs)?;
    if let Some(p) = out {
        std::fs::write(p, report.to_json()).map_err(|e| Error::io(p, e))?;
    }
    Ok(report)
}

/// Scatter data from an embedding directory or a checkpoint.
pub fn visualize(embedding: Option<&Path>, checkpoint: Option<&Path>, out: &Path) -> CommandResult<EmbeddingResponse> {
    let scatter = match (embedding, checkpoint) {
        (Some(dir), None) => service::scatter(&Embedded::load(dir)?.styles)?,
        (None, Some(ck)) => Studio::open(ck)?.embedding()?.clone(),
        _ => return Err(Error::input("give exactly one of --embedding, --checkpoint").into()),
    };
    write_json(out, &scatter)?;
    Ok(scatter)
}

pub fn serve(checkpoint: &Path, bind: SocketAddr) -> CommandResult<()> {
    let studio = Studio::open(checkpoint)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Environment(e.to_string()))?;
    runtime
        .block_on(crate::server::serve(studio, bind))
        .map_err(|e| Error::Environment(format!("server on {bind}: {e}")))?;
    Ok(())
}

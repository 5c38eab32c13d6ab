//! Request handling shared by the command line and the HTTP service, so both
//! produce identical bytes for identical requests.

use std::path::Path;

use base64::Engine;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use stylespace_core::generator::latents_from_seeds;
use stylespace_core::imaging::{grid, Raster};
use stylespace_core::style_space::{interpolate, project_2d, Provenance, StyleStore, StyleVector};
use stylespace_core::training::Checkpoint;
use stylespace_core::{Error, Result};

/// Largest batch a single request may ask for.
pub const MAX_COUNT: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum RequestError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Failed(Error),
}

impl From<Error> for RequestError {
    fn from(e: Error) -> Self {
        match e {
            Error::Input(msg) => RequestError::Invalid(msg),
            e @ Error::Format { .. } => RequestError::Invalid(e.to_string()),
            e => RequestError::Failed(e),
        }
    }
}

impl RequestError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RequestError::NotFound(_) | RequestError::Invalid(_) => 2,
            RequestError::Failed(e) => e.exit_code(),
        }
    }
}

pub type RequestResult<T> = std::result::Result<T, RequestError>;

/// Where the conditioning vector of a request comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StyleSpec {
    /// The stored vector of a training image.
    ImageId(String),
    /// An explicit vector in the standardized style space.
    Vector(Vec<f64>),
    /// Convex mix of stored vectors.
    Mix(MixSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    pub ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Two-way shorthand for `weights = [λ, 1 − λ]`.
    #[serde(default, alias = "λ", skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl MixSpec {
    pub fn weights(&self) -> RequestResult<Vec<f64>> {
        match (&self.weights, self.lambda) {
            (Some(w), None) => Ok(w.clone()),
            (None, Some(l)) if self.ids.len() == 2 => Ok(vec![l, 1.0 - l]),
            (None, Some(_)) => Err(RequestError::Invalid(format!(
                "lambda needs exactly 2 ids, got {}",
                self.ids.len()
            ))),
            (Some(_), Some(_)) => Err(RequestError::Invalid("give either weights or lambda, not both".into())),
            (None, None) => Err(RequestError::Invalid("mix needs weights or lambda".into())),
        }
    }
}

fn default_count() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    /// Required for conditioned generators, rejected by the vanilla one.
    #[serde(default)]
    pub style: Option<StyleSpec>,
    #[serde(default)]
    pub z_seed: u64,
    #[serde(default = "default_count")]
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolateRequest {
    pub ids: Vec<String>,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub z_seed: u64,
    #[serde(default = "default_count")]
    pub count: usize,
}

impl From<InterpolateRequest> for GenerateRequest {
    fn from(r: InterpolateRequest) -> Self {
        GenerateRequest {
            style: Some(StyleSpec::Mix(MixSpec {
                ids: r.ids,
                weights: Some(r.weights),
                lambda: None,
            })),
            z_seed: r.z_seed,
            count: r.count,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    /// Base64-encoded PNG per image.
    pub images: Vec<String>,
    /// The vector every image was conditioned on.
    pub style_vector: Option<Vec<f64>>,
    /// Latent seed of each image.
    pub z_seeds: Vec<u64>,
}

impl GenerateResponse {
    pub fn png_bytes(&self) -> RequestResult<Vec<Vec<u8>>> {
        self.images
            .iter()
            .map(|s| {
                base64::engine::general_purpose::STANDARD
                    .decode(s)
                    .map_err(|e| RequestError::Invalid(format!("image payload: {e}")))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResponse {
    pub points: Vec<EmbeddingPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleEntry {
    pub id: String,
    pub vector: Vec<f64>,
}

/// Two-dimensional layout of stored style vectors.
pub fn scatter(styles: &StyleStore<f32>) -> Result<EmbeddingResponse> {
    let coords = project_2d(styles.vectors())?;
    Ok(EmbeddingResponse {
        points: styles
            .ids()
            .iter()
            .zip(coords)
            .map(|(id, [x, y])| EmbeddingPoint { id: id.clone(), x, y })
            .collect(),
    })
}

/// An immutable checkpoint ready to answer requests.
pub struct Studio {
    checkpoint: Checkpoint<f32>,
    embedding: Option<EmbeddingResponse>,
}

impl Studio {
    pub fn new(checkpoint: Checkpoint<f32>) -> Result<Self> {
        let embedding = checkpoint.styles.as_ref().map(scatter).transpose()?;
        Ok(Studio { checkpoint, embedding })
    }

    pub fn open(path: &Path) -> Result<Self> {
        Self::new(Checkpoint::load(path)?)
    }

    pub fn checkpoint(&self) -> &Checkpoint<f32> {
        &self.checkpoint
    }

    fn styles(&self) -> RequestResult<&StyleStore<f32>> {
        self.checkpoint
            .styles
            .as_ref()
            .ok_or_else(|| RequestError::NotFound("checkpoint carries no style vectors".into()))
    }

    pub fn embedding(&self) -> RequestResult<&EmbeddingResponse> {
        self.embedding
            .as_ref()
            .ok_or_else(|| RequestError::NotFound("checkpoint carries no style vectors".into()))
    }

    pub fn style(&self, id: &str) -> RequestResult<StyleEntry> {
        let v = self
            .styles()?
            .get(id)
            .ok_or_else(|| RequestError::NotFound(format!("unknown image id {id}")))?;
        Ok(StyleEntry {
            id: id.to_string(),
            vector: v.to_vec_f64(),
        })
    }

    /// Resolves a style spec to a concrete vector of the generator's width.
    pub fn resolve(&self, spec: &StyleSpec) -> RequestResult<StyleVector<f32>> {
        let lookup = |id: &str| {
            self.styles()?
                .get(id)
                .ok_or_else(|| RequestError::NotFound(format!("unknown image id {id}")))
        };
        let v = match spec {
            StyleSpec::ImageId(id) => lookup(id)?,
            StyleSpec::Vector(values) => {
                StyleVector::new(values.iter().map(|&x| x as f32).collect(), Provenance::External)?
            }
            StyleSpec::Mix(mix) => {
                let weights = mix.weights()?;
                let vectors = mix.ids.iter().map(|id| lookup(id)).collect::<RequestResult<Vec<_>>>()?;
                interpolate(&vectors, &weights)?
            }
        };
        let expected = self.checkpoint.generator.config().style_dim;
        if Some(v.dim()) != expected {
            return Err(RequestError::Invalid(format!(
                "style vector has dimension {}, generator expects {}",
                v.dim(),
                expected.map_or("none".to_string(), |k| k.to_string())
            )));
        }
        Ok(v)
    }

    /// Renders `count` images with latent seeds `z_seed, z_seed + 1, …`.
    pub fn render(&self, request: &GenerateRequest) -> RequestResult<(Vec<Raster>, Option<StyleVector<f32>>)> {
        if request.count == 0 || request.count > MAX_COUNT {
            return Err(RequestError::Invalid(format!("count must be in 1..={MAX_COUNT}, got {}", request.count)));
        }
        let generator = &self.checkpoint.generator;
        let style = match (&request.style, generator.is_conditioned()) {
            (Some(spec), true) => Some(self.resolve(spec)?),
            (None, false) => None,
            (None, true) => return Err(RequestError::Invalid("style is required by this generator".into())),
            (Some(_), false) => return Err(RequestError::Invalid("this generator takes no style".into())),
        };
        let z = latents_from_seeds::<f32>(generator.config().latent_dim, request.z_seed, request.count);
        let v = style.as_ref().map(|s| {
            let mut v = Array2::zeros((request.count, s.dim()));
            for mut row in v.rows_mut() {
                row.assign(&s.values);
            }
            v
        });
        let images = generator.render(z.view(), v.as_ref().map(|v| v.view()))?;
        Ok((images, style))
    }

    pub fn generate(&self, request: &GenerateRequest) -> RequestResult<GenerateResponse> {
        let (images, style) = self.render(request)?;
        let engine = base64::engine::general_purpose::STANDARD;
        let images = images
            .iter()
            .map(|r| Ok(engine.encode(r.to_png()?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(GenerateResponse {
            images,
            style_vector: style.map(|s| s.to_vec_f64()),
            z_seeds: (0..request.count as u64).map(|i| request.z_seed.wrapping_add(i)).collect(),
        })
    }
}

/// Tiles decoded images into one PNG, at most eight per row.
pub fn grid_png(images: &[Raster]) -> Result<Vec<u8>> {
    grid(images, images.len().clamp(1, 8))?.to_png()
}

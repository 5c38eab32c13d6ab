use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FeatureMapSet, PreprocessSpec, TapLayer};
use crate::imaging::Raster;
use crate::nn::{ops, Conv2d};
use crate::{Error, Result, Scalar};

/// Convolutions per block of the 19-layer network (16 conv + 3 FC).
const BLOCK_DEPTHS: [usize; 5] = [2, 2, 4, 4, 4];
/// Index of every conv in torchvision's `vgg19().features`.
const TORCHVISION_CONV_INDICES: [&[usize]; 5] = [
    &[0, 2],
    &[5, 7],
    &[10, 12, 14, 16],
    &[19, 21, 23, 25],
    &[28, 30, 32, 34],
];

/// Where backbone weights come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSource {
    /// Converted ImageNet weights in safetensors format, keyed like
    /// torchvision (`features.0.weight`, …).
    File { path: PathBuf },
    /// Deterministic He-normal weights drawn from a seeded generator.
    Seeded { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub source: WeightSource,
    /// Output channels of blocks 1–5.
    pub widths: [usize; 5],
    /// Taps read post-ReLU activations, so every Gram entry is non-negative.
    pub relu_tapped: bool,
}

impl BackboneConfig {
    pub const STANDARD_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];

    pub fn seeded(seed: u64) -> Self {
        BackboneConfig {
            source: WeightSource::Seeded { seed },
            widths: Self::STANDARD_WIDTHS,
            relu_tapped: true,
        }
    }

    pub fn from_file(path: impl Into<PathBuf>) -> Self {
        BackboneConfig {
            source: WeightSource::File { path: path.into() },
            widths: Self::STANDARD_WIDTHS,
            relu_tapped: true,
        }
    }

    /// Σ N_l² over the five tapped layers.
    pub fn descriptor_len(&self) -> usize {
        self.widths.iter().map(|n| n * n).sum()
    }
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::seeded(0)
    }
}

/// The convolutional trunk of a 19-layer VGG network, truncated after
/// `conv5-1`. Weights are frozen.
#[derive(Clone, Debug)]
pub struct Vgg19<T> {
    blocks: Vec<Vec<Conv2d<T>>>,
    config: BackboneConfig,
    fingerprint: String,
}

impl<T: Scalar> Vgg19<T> {
    pub fn load(config: &BackboneConfig) -> Result<Self> {
        if config.widths.iter().any(|&w| w == 0) {
            return Err(Error::input("backbone widths must be positive"));
        }
        match &config.source {
            WeightSource::Seeded { seed } => Ok(Self::seeded(config, *seed)),
            WeightSource::File { path } => Self::from_safetensors(config, path),
        }
    }

    fn seeded(config: &BackboneConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(5);
        let mut in_ch = 3;
        for (b, &width) in config.widths.iter().enumerate() {
            // only conv5-1 is needed from the last block
            let depth = if b == 4 { 1 } else { BLOCK_DEPTHS[b] };
            let mut convs = Vec::with_capacity(depth);
            for _ in 0..depth {
                convs.push(Conv2d::new(in_ch, width, 3, 2f64.sqrt(), &mut rng));
                in_ch = width;
            }
            blocks.push(convs);
        }
        let fingerprint = format!("vgg19:seeded:{seed}:{:?}", config.widths);
        Vgg19 {
            blocks,
            config: config.clone(),
            fingerprint,
        }
    }

    fn from_safetensors(config: &BackboneConfig, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            Error::Environment(format!("backbone weights unavailable at {}: {e}", path.display()))
        })?;
        let tensors = safetensors::SafeTensors::deserialize(&bytes)
            .map_err(|e| Error::format("safetensors backbone", e))?;
        let read = |name: &str, expect: &[usize]| -> Result<Vec<f32>> {
            let view = tensors
                .tensor(name)
                .map_err(|e| Error::format("safetensors backbone", format!("{name}: {e}")))?;
            if view.shape() != expect {
                return Err(Error::format(
                    "safetensors backbone",
                    format!("{name} has shape {:?}, expected {expect:?}", view.shape()),
                ));
            }
            if view.dtype() != safetensors::Dtype::F32 {
                return Err(Error::format("safetensors backbone", format!("{name} is not f32")));
            }
            Ok(view
                .data()
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect())
        };
        let mut blocks = Vec::with_capacity(5);
        let mut in_ch = 3;
        for (b, &width) in config.widths.iter().enumerate() {
            let depth = if b == 4 { 1 } else { BLOCK_DEPTHS[b] };
            let mut convs = Vec::with_capacity(depth);
            for &idx in &TORCHVISION_CONV_INDICES[b][..depth] {
                let w = read(&format!("features.{idx}.weight"), &[width, in_ch, 3, 3])?;
                let bias = read(&format!("features.{idx}.bias"), &[width])?;
                let w = Array2::from_shape_vec((width, in_ch * 9), w.into_iter().map(|v| T::of(v as f64)).collect())
                    .expect("shape checked above");
                let bias = Array2::from_shape_vec((1, width), bias.into_iter().map(|v| T::of(v as f64)).collect())
                    .expect("shape checked above");
                convs.push(Conv2d::from_parts(w, bias, in_ch, 3));
                in_ch = width;
            }
            blocks.push(convs);
        }
        let digest = Sha256::digest(&bytes);
        let fingerprint = format!("vgg19:file:{}", hex_prefix(&digest));
        Ok(Vgg19 {
            blocks,
            config: config.clone(),
            fingerprint,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// Stable identifier of architecture + weights, used for cache keys.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn descriptor_len(&self) -> usize {
        self.config.descriptor_len()
    }

    /// Runs a normalized `(1, 3, H, W)` input and returns the five taps.
    pub fn forward_taps(&self, input: Array4<T>) -> Result<Vec<Array3<T>>> {
        let (b, c, h, w) = input.dim();
        if b != 1 || c != 3 {
            return Err(Error::input(format!("backbone expects (1, 3, H, W), got {:?}", input.dim())));
        }
        if h < 16 || w < 16 {
            return Err(Error::input(format!("backbone input {h}×{w} is smaller than 16×16")));
        }
        let mut x = input;
        let mut taps = Vec::with_capacity(5);
        for (bi, convs) in self.blocks.iter().enumerate() {
            if bi > 0 {
                x = ops::max_pool2x(x.view());
            }
            for (ci, conv) in convs.iter().enumerate() {
                x = conv.forward(x.view());
                ops::relu_inplace(&mut x);
                if ci == 0 {
                    taps.push(x.index_axis(Axis(0), 0).to_owned());
                }
            }
        }
        Ok(taps)
    }

    /// Activations at the five tapped layers for `image`.
    pub fn extract(&self, image: &Raster, preprocessing: &PreprocessSpec) -> Result<FeatureMapSet<T>> {
        let input = preprocessing.apply::<T>(image)?;
        let taps = self.forward_taps(input)?;
        FeatureMapSet::new(TapLayer::ALL.iter().copied().zip(taps).collect())
    }
}

fn hex_prefix(bytes: &[u8]) -> String {
    bytes.iter().take(16).map(|b| format!("{b:02x}")).collect()
}

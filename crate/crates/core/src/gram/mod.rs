//! Gram-matrix style descriptors over a frozen VGG-19 trunk.

mod archive;
mod backbone;
mod preprocess;

pub use archive::{DescriptorArchive, DescriptorCache, DescriptorSidecar, DescriptorWriter};
pub use backbone::{BackboneConfig, Vgg19, WeightSource};
pub use preprocess::{Interpolation, PreprocessSpec};

use std::fmt;

use ndarray::{Array1, Array2, Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::imaging::Raster;
use crate::{Error, Result, Scalar};

/// The five tapped layers, in descriptor order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TapLayer {
    #[serde(rename = "conv1-1")]
    Conv1_1,
    #[serde(rename = "conv2-1")]
    Conv2_1,
    #[serde(rename = "conv3-1")]
    Conv3_1,
    #[serde(rename = "conv4-1")]
    Conv4_1,
    #[serde(rename = "conv5-1")]
    Conv5_1,
}

impl TapLayer {
    pub const ALL: [TapLayer; 5] = [
        TapLayer::Conv1_1,
        TapLayer::Conv2_1,
        TapLayer::Conv3_1,
        TapLayer::Conv4_1,
        TapLayer::Conv5_1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TapLayer::Conv1_1 => "conv1-1",
            TapLayer::Conv2_1 => "conv2-1",
            TapLayer::Conv3_1 => "conv3-1",
            TapLayer::Conv4_1 => "conv4-1",
            TapLayer::Conv5_1 => "conv5-1",
        }
    }
}

impl fmt::Display for TapLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Activations `(N_l, H_l, W_l)` at each tapped layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMapSet<T> {
    maps: Vec<(TapLayer, Array3<T>)>,
}

impl<T: Scalar> FeatureMapSet<T> {
    /// Requires exactly the five tap layers in canonical order.
    pub fn new(maps: Vec<(TapLayer, Array3<T>)>) -> Result<Self> {
        let layers: Vec<_> = maps.iter().map(|(l, _)| *l).collect();
        if layers != TapLayer::ALL {
            return Err(Error::input(format!("feature map set must hold {:?}, got {layers:?}", TapLayer::ALL)));
        }
        Ok(FeatureMapSet { maps })
    }

    pub fn iter(&self) -> impl Iterator<Item = (TapLayer, &Array3<T>)> {
        self.maps.iter().map(|(l, m)| (*l, m))
    }

    pub fn layer(&self, layer: TapLayer) -> &Array3<T> {
        &self.maps.iter().find(|(l, _)| *l == layer).expect("all five layers present").1
    }

    pub fn channel_counts(&self) -> [usize; 5] {
        let mut out = [0; 5];
        for (slot, (_, m)) in out.iter_mut().zip(&self.maps) {
            *slot = m.dim().0;
        }
        out
    }

    pub fn gram_matrices(&self) -> Vec<GramMatrix<T>> {
        self.maps
            .iter()
            .map(|(layer, m)| GramMatrix {
                layer: *layer,
                values: gram_matrix(m.view()).expect("backbone maps are non-empty"),
            })
            .collect()
    }

    /// Per-channel spatial means, concatenated over the layers.
    pub fn pooled(&self) -> Array1<T> {
        let mut out = Vec::new();
        for (_, m) in &self.maps {
            let (c, h, w) = m.dim();
            let n = T::of((h * w) as f64);
            for ci in 0..c {
                out.push(m.index_axis(ndarray::Axis(0), ci).sum() / n);
            }
        }
        Array1::from(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix<T> {
    pub layer: TapLayer,
    pub values: Array2<T>,
}

/// Unnormalized Gram matrix `G_ij = Σ_{x,y} F_{i,x,y} F_{j,x,y}` of a
/// `(N, H, W)` activation tensor. The result is exactly symmetric.
pub fn gram_matrix<T: Scalar>(feature_map: ArrayView3<T>) -> Result<Array2<T>> {
    let (n, h, w) = feature_map.dim();
    if n == 0 || h * w == 0 {
        return Err(Error::input(format!("gram matrix of empty tensor {:?}", feature_map.dim())));
    }
    let flat = feature_map
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, h * w))
        .expect("standard layout");
    let mut g = flat.dot(&flat.t());
    for i in 0..n {
        for j in 0..i {
            g[[i, j]] = g[[j, i]];
        }
    }
    Ok(g)
}

/// Concatenated row-major Gram matrices of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct RawStyleDescriptor<T> {
    pub image_id: String,
    pub values: Array1<T>,
}

impl<T: Scalar> RawStyleDescriptor<T> {
    pub fn from_features(image_id: impl Into<String>, features: &FeatureMapSet<T>) -> Self {
        let grams = features.gram_matrices();
        let len = grams.iter().map(|g| g.values.len()).sum();
        let mut values = Vec::with_capacity(len);
        for g in &grams {
            values.extend(g.values.iter().copied());
        }
        RawStyleDescriptor {
            image_id: image_id.into(),
            values: Array1::from(values),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Backbone plus preprocessing: the full image → descriptor pipeline.
#[derive(Clone, Debug)]
pub struct GramExtractor<T> {
    backbone: Vgg19<T>,
    preprocessing: PreprocessSpec,
}

impl<T: Scalar> GramExtractor<T> {
    pub fn new(backbone: Vgg19<T>, preprocessing: PreprocessSpec) -> Result<Self> {
        preprocessing.validate()?;
        Ok(GramExtractor {
            backbone,
            preprocessing,
        })
    }

    pub fn load(config: &BackboneConfig, preprocessing: PreprocessSpec) -> Result<Self> {
        Self::new(Vgg19::load(config)?, preprocessing)
    }

    pub fn backbone(&self) -> &Vgg19<T> {
        &self.backbone
    }

    pub fn preprocessing(&self) -> &PreprocessSpec {
        &self.preprocessing
    }

    pub fn descriptor_len(&self) -> usize {
        self.backbone.descriptor_len()
    }

    pub fn extract_activations(&self, image: &Raster) -> Result<FeatureMapSet<T>> {
        self.backbone.extract(image, &self.preprocessing)
    }

    pub fn gram_descriptor(&self, image_id: &str, image: &Raster) -> Result<RawStyleDescriptor<T>> {
        let features = self.extract_activations(image)?;
        let d = RawStyleDescriptor::from_features(image_id, &features);
        debug_assert_eq!(d.len(), self.descriptor_len());
        Ok(d)
    }

    /// Cache key component identifying weights and preprocessing.
    pub fn fingerprint(&self) -> String {
        format!(
            "{}|{}",
            self.backbone.fingerprint(),
            serde_json::to_string(&self.preprocessing).expect("spec serializes")
        )
    }
}

//! Convolutional discriminator with optional style conditioning.
//!
//! The trunk `φ` maps an image to a feature vector `h`; the unconditional
//! head `ψ` is a single affine layer. Projection conditioning adds
//! `⟨v·V, h⟩`; concatenation conditioning instead feeds image-shaped planes
//! derived from `v` into the trunk alongside the RGB channels.

use ndarray::{concatenate, s, Array2, Array4, ArrayView2, ArrayView4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::generator::block_count;
use crate::nn::{self, ops, Conv2d, Linear, Module, Param};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    None,
    Projection,
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub resolution: usize,
    /// Channels of each downsampling block, highest resolution first; the
    /// trunk ends at 4×4, so there is one entry per halving.
    pub channels: Vec<usize>,
    pub feature_dim: usize,
    pub conditioning: Conditioning,
    pub style_dim: Option<usize>,
}

impl DiscriminatorConfig {
    pub fn standard(resolution: usize, conditioning: Conditioning, style_dim: Option<usize>) -> Result<Self> {
        let halvings = block_count(resolution)?.saturating_sub(1);
        let channels = (0..halvings).map(|i| (32usize << i).min(512)).collect();
        Ok(DiscriminatorConfig {
            resolution,
            channels,
            feature_dim: 512,
            conditioning,
            style_dim,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        match block_count(self.resolution) {
            Ok(1) | Err(_) => problems.push(format!("resolution {} must be a power of two ≥ 8", self.resolution)),
            Ok(b) if self.channels.len() != b - 1 => problems.push(format!(
                "{} channel entries given but resolution {} needs {}",
                self.channels.len(),
                self.resolution,
                b - 1
            )),
            Ok(_) => {}
        }
        if self.channels.contains(&0) || self.feature_dim == 0 {
            problems.push("channel and feature widths must be positive".into());
        }
        match (self.conditioning, self.style_dim) {
            (Conditioning::None, Some(_)) => problems.push("unconditional discriminator takes no style_dim".into()),
            (Conditioning::Projection | Conditioning::Concat, None | Some(0)) => {
                problems.push("conditioned discriminator needs a positive style_dim".into())
            }
            _ => {}
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::input(format!("discriminator config: {}", problems.join("; "))))
        }
    }
}

#[derive(Clone, Debug)]
struct DownBlock<T> {
    conv1: Conv2d<T>,
    conv2: Conv2d<T>,
}

#[derive(Clone, Debug)]
struct DownTrace<T> {
    input: Array4<T>,
    pre1: Array4<T>,
    act1: Array4<T>,
    pre2: Array4<T>,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorTrace<T> {
    trunk_input: Array4<T>,
    v: Option<Array2<T>>,
    rgb_pre: Array4<T>,
    blocks: Vec<DownTrace<T>>,
    flat: Array2<T>,
    feature_pre: Array2<T>,
    features: Array2<T>,
}

impl<T: Scalar> DiscriminatorTrace<T> {
    /// Tensor fed to the convolutional trunk (image, plus condition planes
    /// for the concat variant).
    pub fn trunk_input(&self) -> &Array4<T> {
        &self.trunk_input
    }

    /// Feature vectors `h = φ(x)`, one row per image.
    pub fn features(&self) -> &Array2<T> {
        &self.features
    }
}

#[derive(Clone, Debug)]
pub struct DiscriminatorInputGrads<T> {
    pub x: Array4<T>,
    pub v: Option<Array2<T>>,
}

#[derive(Clone, Debug)]
pub struct StyleDiscriminator<T> {
    config: DiscriminatorConfig,
    from_rgb: Conv2d<T>,
    blocks: Vec<DownBlock<T>>,
    feature: Linear<T>,
    head: Linear<T>,
    /// Projection matrix, shape `(style_dim, feature_dim)`.
    projection: Option<Param<T>>,
    /// Affine map from `v` to three image-sized planes.
    planes: Option<Linear<T>>,
}

impl<T: Scalar> StyleDiscriminator<T> {
    pub fn new<R: Rng + ?Sized>(config: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let gain = 2f64.sqrt();
        let in_channels = if config.conditioning == Conditioning::Concat { 6 } else { 3 };
        let from_rgb = Conv2d::equalized(in_channels, config.channels[0], 1, gain, rng);
        let halvings = block_count(config.resolution)? - 1;
        let mut blocks = Vec::with_capacity(halvings);
        for i in 0..halvings {
            let c_in = config.channels[i];
            let c_out = config.channels[(i + 1).min(config.channels.len() - 1)];
            blocks.push(DownBlock {
                conv1: Conv2d::equalized(c_in, c_in, 3, gain, rng),
                conv2: Conv2d::equalized(c_in, c_out, 3, gain, rng),
            });
        }
        let last = *config.channels.last().expect("validated");
        let feature = Linear::equalized(last * 16, config.feature_dim, gain, 1.0, rng);
        let head = Linear::equalized(config.feature_dim, 1, 1.0, 1.0, rng);
        let k = config.style_dim.unwrap_or(0);
        let projection = (config.conditioning == Conditioning::Projection).then(|| Param::zeros(k, config.feature_dim));
        let side = config.resolution;
        let planes = (config.conditioning == Conditioning::Concat)
            .then(|| Linear::equalized(k, 3 * side * side, 1.0, 1.0, rng));
        Ok(StyleDiscriminator {
            config,
            from_rgb,
            blocks,
            feature,
            head,
            projection,
            planes,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn conditioning(&self) -> Conditioning {
        self.config.conditioning
    }

    pub fn projection(&self) -> Option<&Param<T>> {
        self.projection.as_ref()
    }

    pub fn projection_mut(&mut self) -> Option<&mut Param<T>> {
        self.projection.as_mut()
    }

    pub fn planes_mut(&mut self) -> Option<&mut Linear<T>> {
        self.planes.as_mut()
    }

    /// Image-shaped planes the concat variant derives from `v`.
    pub fn condition_planes(&self, v: ArrayView2<T>) -> Result<Array4<T>> {
        let layer = self
            .planes
            .as_ref()
            .ok_or_else(|| Error::state("only the concat discriminator builds condition planes"))?;
        self.check_style(v, v.nrows())?;
        let r = self.config.resolution;
        Ok(layer
            .forward(v)
            .into_shape_with_order((v.nrows(), 3, r, r))
            .expect("plane layer emits 3·R·R values"))
    }

    fn check_style(&self, v: ArrayView2<T>, batch: usize) -> Result<()> {
        let k = self.config.style_dim.unwrap_or(0);
        if v.ncols() != k || v.nrows() != batch {
            return Err(Error::input(format!(
                "style batch is {}×{}, expected {batch}×{k}",
                v.nrows(),
                v.ncols()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::input("style vector is not finite"));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView4<T>, v: Option<ArrayView2<T>>) -> Result<(Array2<T>, DiscriminatorTrace<T>)> {
        let (batch, channels, h, w) = x.dim();
        let r = self.config.resolution;
        if channels != 3 || h != r || w != r {
            return Err(Error::input(format!("discriminator expects 3×{r}×{r} images, got {channels}×{h}×{w}")));
        }
        if batch == 0 {
            return Err(Error::input("empty discriminator batch"));
        }
        match (self.config.conditioning, v) {
            (Conditioning::None, Some(_)) => return Err(Error::input("unconditional discriminator takes no style vector")),
            (Conditioning::None, None) => {}
            (_, None) => return Err(Error::input("conditioned discriminator needs a style vector")),
            (_, Some(v)) => self.check_style(v, batch)?,
        }
        let slope = T::of(ops::LEAKY_SLOPE);
        let trunk_input = match (self.config.conditioning, v) {
            (Conditioning::Concat, Some(v)) => concatenate![Axis(1), x, self.condition_planes(v)?],
            _ => x.to_owned(),
        };
        let rgb_pre = self.from_rgb.forward(trunk_input.view());
        let mut act = ops::leaky_relu(rgb_pre.view(), slope);
        let mut traces = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let pre1 = block.conv1.forward(act.view());
            let act1 = ops::leaky_relu(pre1.view(), slope);
            let pre2 = block.conv2.forward(act1.view());
            let act2 = ops::leaky_relu(pre2.view(), slope);
            let next = ops::avg_pool2x(act2.view());
            traces.push(DownTrace {
                input: act,
                pre1,
                act1,
                pre2,
            });
            act = next;
        }
        let width = act.len() / batch;
        let flat = act.into_shape_with_order((batch, width)).expect("pooled maps are contiguous");
        let feature_pre = self.feature.forward(flat.view());
        let features = ops::leaky_relu(feature_pre.view(), slope);
        let mut logits = self.head.forward(features.view());
        if let (Some(vm), Some(v)) = (&self.projection, v) {
            let embedded = v.dot(&vm.value);
            let inner = (&embedded * &features).sum_axis(Axis(1));
            logits.column_mut(0).zip_mut_with(&inner, |l, &p| *l += p);
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::numeric("discriminator produced a non-finite logit"));
        }
        let trace = DiscriminatorTrace {
            trunk_input,
            v: v.map(|v| v.to_owned()),
            rgb_pre,
            blocks: traces,
            flat,
            feature_pre,
            features,
        };
        Ok((logits, trace))
    }

    /// One logit per image.
    pub fn discriminate(&self, x: ArrayView4<T>, v: Option<ArrayView2<T>>) -> Result<Vec<T>> {
        Ok(self.forward(x, v)?.0.column(0).to_vec())
    }

    /// Backpropagates `d_logits` (shape `(B, 1)`), accumulating parameter
    /// gradients when `param_grads` is set.
    pub fn backward(
        &mut self,
        trace: &DiscriminatorTrace<T>,
        d_logits: ArrayView2<T>,
        param_grads: bool,
    ) -> DiscriminatorInputGrads<T> {
        let slope = T::of(ops::LEAKY_SLOPE);
        let mut d_features = self.head.backward(trace.features.view(), d_logits, param_grads);
        let mut dv = None;
        if let (Some(vm), Some(v)) = (&mut self.projection, &trace.v) {
            let embedded = v.dot(&vm.value);
            // d⟨vV, h⟩/dh = vV, /d(vV) = h
            let dl = d_logits.column(0).insert_axis(Axis(1)).to_owned();
            d_features += &(&embedded * &dl);
            let d_embedded = &trace.features * &dl;
            if param_grads {
                vm.grad += &v.t().dot(&d_embedded);
            }
            dv = Some(d_embedded.dot(&vm.value.t()));
        }
        let d_pre = ops::leaky_relu_backward(trace.feature_pre.view(), d_features.view(), slope);
        let d_flat = self.feature.backward(trace.flat.view(), d_pre.view(), param_grads);
        let last = self.blocks.last().map(|b| b.conv2.out_channels()).unwrap_or(self.from_rgb.out_channels());
        let batch = d_flat.nrows();
        let mut d = d_flat
            .into_shape_with_order((batch, last, 4, 4))
            .expect("feature input is C·4·4");
        for (block, bt) in self.blocks.iter_mut().zip(&trace.blocks).rev() {
            let d_act2 = ops::avg_pool2x_backward(d.view());
            let d_pre2 = ops::leaky_relu_backward(bt.pre2.view(), d_act2.view(), slope);
            let d_act1 = block.conv2.backward(bt.act1.view(), d_pre2.view(), param_grads);
            let d_pre1 = ops::leaky_relu_backward(bt.pre1.view(), d_act1.view(), slope);
            let d_in = block.conv1.backward(bt.input.view(), d_pre1.view(), param_grads);
            d = d_in;
        }
        let d_rgb_pre = ops::leaky_relu_backward(trace.rgb_pre.view(), d.view(), slope);
        let d_input = self.from_rgb.backward(trace.trunk_input.view(), d_rgb_pre.view(), param_grads);
        let dx = d_input.slice(s![.., ..3, .., ..]).to_owned();
        if let (Some(layer), Some(v)) = (&mut self.planes, &trace.v) {
            let r = self.config.resolution;
            let d_planes = d_input
                .slice(s![.., 3.., .., ..])
                .to_owned()
                .into_shape_with_order((batch, 3 * r * r))
                .expect("planes are contiguous");
            dv = Some(layer.backward(v.view(), d_planes.view(), param_grads));
        }
        DiscriminatorInputGrads { x: dx, v: dv }
    }

    /// Whether any parameter reads the style vector.
    pub fn has_style_parameters(&self) -> bool {
        self.projection.is_some() || self.planes.is_some()
    }
}

impl<T: Scalar> Module<T> for StyleDiscriminator<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = nn::scoped("from_rgb", self.from_rgb.params());
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(nn::scoped(&format!("block{i}.conv1"), b.conv1.params()));
            out.extend(nn::scoped(&format!("block{i}.conv2"), b.conv2.params()));
        }
        out.extend(nn::scoped("feature", self.feature.params()));
        out.extend(nn::scoped("head", self.head.params()));
        if let Some(p) = &self.projection {
            out.push(("projection".into(), p));
        }
        if let Some(l) = &self.planes {
            out.extend(nn::scoped("planes", l.params()));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = nn::scoped("from_rgb", self.from_rgb.params_mut());
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(nn::scoped(&format!("block{i}.conv1"), b.conv1.params_mut()));
            out.extend(nn::scoped(&format!("block{i}.conv2"), b.conv2.params_mut()));
        }
        out.extend(nn::scoped("feature", self.feature.params_mut()));
        out.extend(nn::scoped("head", self.head.params_mut()));
        if let Some(p) = &mut self.projection {
            out.push(("projection".into(), p));
        }
        if let Some(l) = &mut self.planes {
            out.extend(nn::scoped("planes", l.params_mut()));
        }
        out
    }
}

//! Style-modulated generator: identity mapping `z → w`, style mapping
//! `v → u`, and a progressive synthesis network whose AdaIN layers read `u`
//! for the modulations closest to the output and `w` elsewhere.

use ndarray::{concatenate, s, Array1, Array2, Array4, ArrayView2, ArrayView4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::imaging::Raster;
use crate::nn::{self, ops, Conv2d, Linear, Module, Param};
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    /// Width of `w` and `u` and of both mapping networks.
    pub w_dim: usize,
    pub mapping_layers: usize,
    /// Dimension of the conditioning style vector; `None` builds the
    /// unconditional generator with no style path at all.
    pub style_dim: Option<usize>,
    /// Channels per synthesis block; block 0 runs at 4×4 and each further
    /// block doubles the resolution.
    pub channels: Vec<usize>,
    pub mapping_lr_mult: f64,
    /// How many of the final AdaIN modulations read `u`.
    pub style_modulations: usize,
    pub adain_eps: f64,
}

impl GeneratorConfig {
    /// Full-width configuration: 512-d codes, eight mapping layers.
    pub fn standard(style_dim: Option<usize>, resolution: usize) -> Result<Self> {
        let blocks = block_count(resolution)?;
        let channels = (0..blocks).map(|b| (512usize >> b.saturating_sub(2)).max(32)).collect();
        Ok(GeneratorConfig {
            latent_dim: 512,
            w_dim: 512,
            mapping_layers: 8,
            style_dim,
            channels,
            mapping_lr_mult: 0.01,
            style_modulations: 4,
            adain_eps: 1e-8,
        })
    }

    pub fn resolution(&self) -> usize {
        4 << (self.channels.len().saturating_sub(1))
    }

    pub fn modulation_count(&self) -> usize {
        2 * self.channels.len()
    }

    /// Whether modulation `index` (forward order) is driven by `u`.
    pub fn reads_style(&self, index: usize) -> bool {
        if self.style_dim.is_none() {
            return false;
        }
        let total = self.modulation_count();
        index + self.style_modulations.min(total) >= total
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.latent_dim == 0 {
            problems.push("latent_dim must be positive");
        }
        if self.w_dim == 0 {
            problems.push("w_dim must be positive");
        }
        if self.mapping_layers == 0 {
            problems.push("mapping_layers must be positive");
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            problems.push("channels must be a non-empty list of positive widths");
        }
        if self.style_dim == Some(0) {
            problems.push("style_dim must be positive when present");
        }
        if !(self.adain_eps > 0.0) {
            problems.push("adain_eps must be positive");
        }
        if !(self.mapping_lr_mult > 0.0) {
            problems.push("mapping_lr_mult must be positive");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::input(format!("generator config: {}", problems.join("; "))))
        }
    }
}

const RENDER_CHUNK: usize = 32;

/// Standard-normal latent determined by `seed` alone.
pub fn latent_from_seed<T: Scalar>(dim: usize, seed: u64) -> Array1<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array1::from_shape_simple_fn(dim, || {
        let x: f64 = StandardNormal.sample(&mut rng);
        T::of(x)
    })
}

/// Latents for seeds `first_seed, first_seed + 1, …`, one per row.
pub fn latents_from_seeds<T: Scalar>(dim: usize, first_seed: u64, count: usize) -> Array2<T> {
    let mut z = Array2::zeros((count, dim));
    for (i, mut row) in z.rows_mut().into_iter().enumerate() {
        row.assign(&latent_from_seed::<T>(dim, first_seed.wrapping_add(i as u64)));
    }
    z
}

pub(crate) fn block_count(resolution: usize) -> Result<usize> {
    if resolution < 4 || !resolution.is_power_of_two() {
        return Err(Error::input(format!("resolution {resolution} must be a power of two ≥ 4")));
    }
    Ok(resolution.trailing_zeros() as usize - 1)
}

/// Stack of equalized dense layers, each followed by a leaky ReLU.
#[derive(Clone, Debug)]
pub struct MappingNetwork<T> {
    layers: Vec<Linear<T>>,
}

#[derive(Clone, Debug)]
pub struct MappingTrace<T> {
    inputs: Vec<Array2<T>>,
    pre_activations: Vec<Array2<T>>,
}

impl<T: Scalar> MappingNetwork<T> {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, width: usize, depth: usize, lr_mult: f64, rng: &mut R) -> Self {
        let layers = (0..depth)
            .map(|i| {
                let fan_in = if i == 0 { input_dim } else { width };
                Linear::equalized(fan_in, width, 2f64.sqrt(), lr_mult, rng)
            })
            .collect();
        MappingNetwork { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.outputs()).unwrap_or(0)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Result<(Array2<T>, MappingTrace<T>)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::input(format!(
                "mapping network expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("mapping network input is not finite"));
        }
        let slope = T::of(ops::LEAKY_SLOPE);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for layer in &self.layers {
            let y = layer.forward(h.view());
            let next = ops::leaky_relu(y.view(), slope);
            inputs.push(h);
            pre.push(y);
            h = next;
        }
        Ok((
            h,
            MappingTrace {
                inputs,
                pre_activations: pre,
            },
        ))
    }

    pub fn backward(&mut self, trace: &MappingTrace<T>, dout: ArrayView2<T>, param_grads: bool) -> Array2<T> {
        let slope = T::of(ops::LEAKY_SLOPE);
        let mut d = dout.to_owned();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let dy = ops::leaky_relu_backward(trace.pre_activations[i].view(), d.view(), slope);
            d = layer.backward(trace.inputs[i].view(), dy.view(), param_grads);
        }
        d
    }
}

impl<T: Scalar> Module<T> for MappingNetwork<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| nn::scoped(&format!("fc{i}"), l.params()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| nn::scoped(&format!("fc{i}"), l.params_mut()))
            .collect()
    }
}

/// Which code drives an AdaIN modulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeSource {
    /// `w`, from the identity mapping network.
    Latent,
    /// `u`, from the style mapping network.
    Style,
}

/// Affine head producing per-channel `(γ, β)` from a code.
#[derive(Clone, Debug)]
pub struct Modulation<T> {
    pub source: CodeSource,
    pub affine: Linear<T>,
}

impl<T: Scalar> Modulation<T> {
    fn new<R: Rng + ?Sized>(source: CodeSource, code_dim: usize, channels: usize, rng: &mut R) -> Self {
        let mut affine = Linear::equalized(code_dim, 2 * channels, 1.0, 1.0, rng);
        // γ starts at 1, β at 0
        affine.bias.value.slice_mut(s![.., ..channels]).fill(T::one());
        Modulation { source, affine }
    }

    pub fn channels(&self) -> usize {
        self.affine.outputs() / 2
    }
}

#[derive(Clone, Debug)]
struct SynthesisBlock<T> {
    /// Absent in the first block, which starts from the learned constant.
    up_conv: Option<Conv2d<T>>,
    conv: Conv2d<T>,
    mods: [Modulation<T>; 2],
}

/// Everything recorded during a forward pass that `backward` needs.
#[derive(Clone, Debug)]
pub struct GeneratorTrace<T> {
    w: Array2<T>,
    u: Option<Array2<T>>,
    latent_trace: MappingTrace<T>,
    style_trace: Option<MappingTrace<T>>,
    blocks: Vec<BlockTrace<T>>,
    rgb_input: Array4<T>,
    output: Array4<T>,
}

#[derive(Clone, Debug)]
struct BlockTrace<T> {
    upsampled: Option<Array4<T>>,
    up_pre: Option<Array4<T>>,
    conv_in: Array4<T>,
    conv_pre: Array4<T>,
    mods: [ModTrace<T>; 2],
}

#[derive(Clone, Debug)]
struct ModTrace<T> {
    pre_adain: Array4<T>,
    gamma: Array2<T>,
    cache: nn::AdainCache<T>,
}

impl<T: Scalar> GeneratorTrace<T> {
    pub fn w(&self) -> &Array2<T> {
        &self.w
    }

    pub fn u(&self) -> Option<&Array2<T>> {
        self.u.as_ref()
    }

    pub fn output(&self) -> &Array4<T> {
        &self.output
    }

    /// Feature map entering AdaIN modulation `index` (forward order).
    pub fn pre_adain(&self, index: usize) -> &Array4<T> {
        &self.blocks[index / 2].mods[index % 2].pre_adain
    }
}

/// Gradients with respect to the generator inputs.
#[derive(Clone, Debug)]
pub struct GeneratorInputGrads<T> {
    pub z: Array2<T>,
    /// Present when the generator is style-conditioned.
    pub v: Option<Array2<T>>,
}

#[derive(Clone, Debug)]
pub struct StyleGenerator<T> {
    config: GeneratorConfig,
    latent_mapping: MappingNetwork<T>,
    style_mapping: Option<MappingNetwork<T>>,
    /// Learned 4×4 input, shape `(C0, 16)`.
    constant: Param<T>,
    blocks: Vec<SynthesisBlock<T>>,
    to_rgb: Conv2d<T>,
}

impl<T: Scalar> StyleGenerator<T> {
    pub fn new<R: Rng + ?Sized>(config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let latent_mapping = MappingNetwork::new(
            config.latent_dim,
            config.w_dim,
            config.mapping_layers,
            config.mapping_lr_mult,
            rng,
        );
        let style_mapping = config
            .style_dim
            .map(|k| MappingNetwork::new(k, config.w_dim, config.mapping_layers, config.mapping_lr_mult, rng));
        let constant = Param::normal(config.channels[0], 16, 1.0, rng);
        let mut blocks = Vec::with_capacity(config.channels.len());
        let gain = 2f64.sqrt();
        for (b, &ch) in config.channels.iter().enumerate() {
            let up_conv = (b > 0).then(|| Conv2d::equalized(config.channels[b - 1], ch, 3, gain, rng));
            let conv = Conv2d::equalized(ch, ch, 3, gain, rng);
            let source = |j: usize| {
                if config.reads_style(2 * b + j) {
                    CodeSource::Style
                } else {
                    CodeSource::Latent
                }
            };
            let mods = [
                Modulation::new(source(0), config.w_dim, ch, rng),
                Modulation::new(source(1), config.w_dim, ch, rng),
            ];
            blocks.push(SynthesisBlock { up_conv, conv, mods });
        }
        let last = *config.channels.last().expect("validated non-empty");
        let to_rgb = Conv2d::equalized(last, 3, 1, 1.0, rng);
        Ok(StyleGenerator {
            config,
            latent_mapping,
            style_mapping,
            constant,
            blocks,
            to_rgb,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn resolution(&self) -> usize {
        self.config.resolution()
    }

    pub fn is_conditioned(&self) -> bool {
        self.style_mapping.is_some()
    }

    /// Code source of every modulation in forward order.
    pub fn routing(&self) -> Vec<CodeSource> {
        self.blocks.iter().flat_map(|b| b.mods.iter().map(|m| m.source)).collect()
    }

    pub fn latent_mapping(&self) -> &MappingNetwork<T> {
        &self.latent_mapping
    }

    pub fn style_mapping(&self) -> Option<&MappingNetwork<T>> {
        self.style_mapping.as_ref()
    }

    /// Mutable access to the affine head of modulation `index`.
    pub fn modulation_mut(&mut self, index: usize) -> &mut Modulation<T> {
        &mut self.blocks[index / 2].mods[index % 2]
    }

    pub fn map_latent(&self, z: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(self.latent_mapping.forward(z)?.0)
    }

    /// Maps a batch of *standardized* style vectors to `u`.
    pub fn map_style(&self, v: ArrayView2<T>) -> Result<Array2<T>> {
        let mapping = self
            .style_mapping
            .as_ref()
            .ok_or_else(|| Error::state("unconditional generator has no style mapping"))?;
        Ok(mapping.forward(v)?.0)
    }

    fn check_inputs(&self, z: ArrayView2<T>, v: Option<ArrayView2<T>>) -> Result<()> {
        match (&self.style_mapping, v) {
            (Some(_), None) => return Err(Error::input("conditioned generator needs a style vector")),
            (None, Some(_)) => return Err(Error::input("unconditional generator takes no style vector")),
            (Some(_), Some(v)) if v.nrows() != z.nrows() => {
                return Err(Error::input(format!("{} latents but {} style vectors", z.nrows(), v.nrows())))
            }
            _ => {}
        }
        if z.nrows() == 0 {
            return Err(Error::input("empty generator batch"));
        }
        Ok(())
    }

    pub fn forward(&self, z: ArrayView2<T>, v: Option<ArrayView2<T>>) -> Result<(Array4<T>, GeneratorTrace<T>)> {
        self.check_inputs(z, v)?;
        let batch = z.nrows();
        let (w, latent_trace) = self.latent_mapping.forward(z)?;
        let (u, style_trace) = match (&self.style_mapping, v) {
            (Some(m), Some(v)) => {
                let (u, t) = m.forward(v)?;
                (Some(u), Some(t))
            }
            _ => (None, None),
        };
        let eps = T::of(self.config.adain_eps);
        let slope = T::of(ops::LEAKY_SLOPE);
        let c0 = self.config.channels[0];
        let base = self
            .constant
            .value
            .view()
            .into_shape_with_order((1, c0, 4, 4))
            .expect("constant is C0×16");
        let mut x = base.broadcast((batch, c0, 4, 4)).expect("broadcast batch").to_owned();
        let mut traces = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let code = |m: &Modulation<T>| match m.source {
                CodeSource::Latent => &w,
                CodeSource::Style => u.as_ref().expect("style modulations exist only with a style path"),
            };
            let modulate = |m: &Modulation<T>, pre: Array4<T>| -> Result<(Array4<T>, ModTrace<T>)> {
                let ch = m.channels();
                let gb = m.affine.forward(code(m).view());
                let gamma = gb.slice(s![.., ..ch]).to_owned();
                let beta = gb.slice(s![.., ch..]);
                let (y, cache) = nn::adain_forward(pre.view(), gamma.view(), beta, eps)?;
                Ok((
                    y,
                    ModTrace {
                        pre_adain: pre,
                        gamma,
                        cache,
                    },
                ))
            };
            let (upsampled, up_pre, first_pre) = match &block.up_conv {
                None => (None, None, x),
                Some(conv) => {
                    let up = ops::upsample2x(x.view());
                    let pre = conv.forward(up.view());
                    let act = ops::leaky_relu(pre.view(), slope);
                    (Some(up), Some(pre), act)
                }
            };
            let (conv_in, m0) = modulate(&block.mods[0], first_pre)?;
            let conv_pre = block.conv.forward(conv_in.view());
            let act = ops::leaky_relu(conv_pre.view(), slope);
            let (out, m1) = modulate(&block.mods[1], act)?;
            traces.push(BlockTrace {
                upsampled,
                up_pre,
                conv_in,
                conv_pre,
                mods: [m0, m1],
            });
            x = out;
        }
        let rgb = self.to_rgb.forward(x.view()).mapv(|v| v.tanh());
        let trace = GeneratorTrace {
            w,
            u,
            latent_trace,
            style_trace,
            blocks: traces,
            rgb_input: x,
            output: rgb.clone(),
        };
        Ok((rgb, trace))
    }

    /// Images in `[-1, 1]` for a batch of latents and standardized style vectors.
    pub fn synthesize(&self, z: ArrayView2<T>, v: Option<ArrayView2<T>>) -> Result<Array4<T>> {
        Ok(self.forward(z, v)?.0)
    }

    /// Synthesizes in chunks and converts to rasters.
    pub fn render(&self, z: ArrayView2<T>, v: Option<ArrayView2<T>>) -> Result<Vec<Raster>> {
        self.check_inputs(z, v)?;
        let mut out = Vec::with_capacity(z.nrows());
        for lo in (0..z.nrows()).step_by(RENDER_CHUNK) {
            let hi = (lo + RENDER_CHUNK).min(z.nrows());
            let images = self.synthesize(z.slice(s![lo..hi, ..]), v.map(|v| v.slice_move(s![lo..hi, ..])))?;
            for img in images.outer_iter() {
                out.push(Raster::from_signed(img)?);
            }
        }
        Ok(out)
    }

    /// Backpropagates `d_image`, accumulating parameter gradients.
    pub fn backward(&mut self, trace: &GeneratorTrace<T>, d_image: ArrayView4<T>) -> GeneratorInputGrads<T> {
        let slope = T::of(ops::LEAKY_SLOPE);
        let d_rgb_pre = ops::tanh_backward(trace.output.view(), d_image);
        let mut d = self.to_rgb.backward(trace.rgb_input.view(), d_rgb_pre.view(), true);
        let mut dw = Array2::<T>::zeros(trace.w.raw_dim());
        let mut du = trace.u.as_ref().map(|u| Array2::<T>::zeros(u.raw_dim()));
        let (w, u) = (&trace.w, trace.u.as_ref());
        for (block, bt) in self.blocks.iter_mut().zip(&trace.blocks).rev() {
            let mut demod = |m: &mut Modulation<T>, mt: &ModTrace<T>, d: Array4<T>| -> Array4<T> {
                let (dx, dgamma, dbeta) = nn::adain_backward(&mt.cache, mt.gamma.view(), d.view());
                let dgb = concatenate![Axis(1), dgamma, dbeta];
                match m.source {
                    CodeSource::Latent => {
                        let dc = m.affine.backward(w.view(), dgb.view(), true);
                        dw += &dc;
                    }
                    CodeSource::Style => {
                        let code = u.expect("style trace present");
                        let dc = m.affine.backward(code.view(), dgb.view(), true);
                        *du.as_mut().expect("style grads allocated") += &dc;
                    }
                }
                dx
            };
            let d_act = demod(&mut block.mods[1], &bt.mods[1], d);
            let d_pre = ops::leaky_relu_backward(bt.conv_pre.view(), d_act.view(), slope);
            let d_conv_in = block.conv.backward(bt.conv_in.view(), d_pre.view(), true);
            let d_first = demod(&mut block.mods[0], &bt.mods[0], d_conv_in);
            d = match (&mut block.up_conv, &bt.upsampled, &bt.up_pre) {
                (Some(conv), Some(up), Some(pre)) => {
                    let d_pre = ops::leaky_relu_backward(pre.view(), d_first.view(), slope);
                    let d_up = conv.backward(up.view(), d_pre.view(), true);
                    ops::upsample2x_backward(d_up.view())
                }
                _ => d_first,
            };
        }
        // d is now the gradient at the broadcast constant
        let c0 = self.config.channels[0];
        let dconst = d.sum_axis(Axis(0)).into_shape_with_order((c0, 16)).expect("C0×4×4");
        self.constant.grad += &dconst;
        let dz = self.latent_mapping.backward(&trace.latent_trace, dw.view(), true);
        let dv = match (&mut self.style_mapping, &trace.style_trace, du) {
            (Some(m), Some(t), Some(du)) => Some(m.backward(t, du.view(), true)),
            _ => None,
        };
        GeneratorInputGrads { z: dz, v: dv }
    }
}

impl<T: Scalar> Module<T> for StyleGenerator<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = nn::scoped("mapping.latent", self.latent_mapping.params());
        if let Some(m) = &self.style_mapping {
            out.extend(nn::scoped("mapping.style", m.params()));
        }
        out.push(("synthesis.constant".into(), &self.constant));
        for (b, block) in self.blocks.iter().enumerate() {
            let p = format!("synthesis.block{b}");
            if let Some(c) = &block.up_conv {
                out.extend(nn::scoped(&format!("{p}.up_conv"), c.params()));
            }
            out.extend(nn::scoped(&format!("{p}.conv"), block.conv.params()));
            for (j, m) in block.mods.iter().enumerate() {
                out.extend(nn::scoped(&format!("{p}.mod{j}"), m.affine.params()));
            }
        }
        out.extend(nn::scoped("synthesis.to_rgb", self.to_rgb.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = nn::scoped("mapping.latent", self.latent_mapping.params_mut());
        if let Some(m) = &mut self.style_mapping {
            out.extend(nn::scoped("mapping.style", m.params_mut()));
        }
        out.push(("synthesis.constant".into(), &mut self.constant));
        for (b, block) in self.blocks.iter_mut().enumerate() {
            let p = format!("synthesis.block{b}");
            if let Some(c) = &mut block.up_conv {
                out.extend(nn::scoped(&format!("{p}.up_conv"), c.params_mut()));
            }
            out.extend(nn::scoped(&format!("{p}.conv"), block.conv.params_mut()));
            for (j, m) in block.mods.iter_mut().enumerate() {
                out.extend(nn::scoped(&format!("{p}.mod{j}"), m.affine.params_mut()));
            }
        }
        out.extend(nn::scoped("synthesis.to_rgb", self.to_rgb.params_mut()));
        out
    }
}

//! Adversarial training of the style-conditioned generator and its
//! ablation variants.

mod checkpoint;
mod config;
pub mod losses;

pub use checkpoint::{Checkpoint, HistoryRow, CHECKPOINT_FORMAT};
pub use config::{LossKind, TrainingConfig, Variant};

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::discriminator::StyleDiscriminator;
use crate::generator::StyleGenerator;
use crate::imaging::Raster;
use crate::nn::{Adam, Module};
use crate::style_space::{EmbeddingModel, StyleStore};
use crate::{Error, Result, Scalar};

/// Training images in `[-1, 1]` with their standardized style vectors.
#[derive(Clone, Debug)]
pub struct TrainingSet<T> {
    ids: Vec<String>,
    images: Array4<T>,
    styles: Option<StyleStore<T>>,
    fingerprint: String,
}

impl<T: Scalar> TrainingSet<T> {
    /// `images` has shape `(N, 3, R, R)`; `styles`, when given, must list the
    /// same ids in the same order.
    pub fn new(ids: Vec<String>, images: Array4<T>, styles: Option<StyleStore<T>>) -> Result<Self> {
        let (n, c, h, w) = images.dim();
        if n == 0 {
            return Err(Error::input("training set is empty"));
        }
        if ids.len() != n {
            return Err(Error::input(format!("{} ids for {n} images", ids.len())));
        }
        if c != 3 || h != w {
            return Err(Error::input(format!("training images must be square RGB, got {c}×{h}×{w}")));
        }
        if images.iter().any(|v| !v.is_finite() || v.abs() > T::one()) {
            return Err(Error::input("training pixels must lie in [-1, 1]"));
        }
        if let Some(store) = &styles {
            if store.ids() != ids.as_slice() {
                return Err(Error::input("style store ids do not match the image ids"));
            }
        }
        let mut hasher = Sha256::new();
        for id in &ids {
            hasher.update(id.as_bytes());
            hasher.update([0]);
        }
        for v in images.iter() {
            hasher.update((v.as_f64() as f32).to_le_bytes());
        }
        let fingerprint = format!("{:x}", hasher.finalize());
        Ok(TrainingSet {
            ids,
            images,
            styles,
            fingerprint,
        })
    }

    pub fn from_rasters(ids: Vec<String>, rasters: &[Raster], styles: Option<StyleStore<T>>) -> Result<Self> {
        let first = rasters.first().ok_or_else(|| Error::input("training set is empty"))?;
        let r = first.height();
        let mut images = Array4::zeros((rasters.len(), 3, r, r));
        for (mut slot, raster) in images.outer_iter_mut().zip(rasters) {
            if raster.height() != r || raster.width() != r {
                return Err(Error::input("training rasters differ in size"));
            }
            slot.assign(&raster.to_signed::<T>());
        }
        Self::new(ids, images, styles)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.images.dim().2
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn images(&self) -> &Array4<T> {
        &self.images
    }

    pub fn styles(&self) -> Option<&StyleStore<T>> {
        self.styles.as_ref()
    }

    /// Hash of ids and pixels; checkpoints trained on the same data share it.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
}

/// A real minibatch: images and the conditioning vector of each.
#[derive(Clone, Debug)]
pub struct RealBatch<T> {
    pub indices: Vec<usize>,
    pub ids: Vec<String>,
    pub images: Array4<T>,
    pub styles: Option<Array2<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub r1: Option<f64>,
}

/// Owns both networks and their optimizers for one run.
pub struct Trainer<T: Scalar> {
    config: TrainingConfig,
    generator: StyleGenerator<T>,
    discriminator: StyleDiscriminator<T>,
    g_opt: Adam<T>,
    d_opt: Adam<T>,
    data: TrainingSet<T>,
    embedding: Option<EmbeddingModel<T>>,
    /// Vectors the networks are conditioned on during training: embedded
    /// styles, or the fixed random assignments of `random_style`.
    conditioning: Option<StyleStore<T>>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
    history: Vec<HistoryRow>,
    last_good: Option<(usize, StyleGenerator<T>, StyleDiscriminator<T>)>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainingConfig, data: TrainingSet<T>, embedding: Option<EmbeddingModel<T>>) -> Result<Self> {
        config.validate()?;
        if data.resolution() != config.resolution {
            return Err(Error::input(format!(
                "training images are {0}×{0}, config expects {1}×{1}",
                data.resolution(),
                config.resolution
            )));
        }
        if let (Some(model), Some(store)) = (&embedding, data.styles()) {
            if model.k() != store.dim() {
                return Err(Error::input(format!(
                    "embedding has k = {} but stored styles have dimension {}",
                    model.k(),
                    store.dim()
                )));
            }
        }
        let variant = config.variant;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let style_dim = match variant {
            Variant::Vanilla => None,
            Variant::Controlled | Variant::ConcatDisc => Some(
                data.styles()
                    .ok_or_else(|| Error::input(format!("variant {variant} needs embedded styles for every image")))?
                    .dim(),
            ),
            Variant::RandomStyle => Some(
                embedding
                    .as_ref()
                    .map(|m| m.k())
                    .or(data.styles().map(|s| s.dim()))
                    .or(config.style_dim)
                    .ok_or_else(|| Error::input("random_style needs an embedding or an explicit style_dim"))?,
            ),
        };
        if let (Some(explicit), Some(k)) = (config.style_dim, style_dim) {
            if explicit != k {
                return Err(Error::input(format!("style_dim {explicit} disagrees with the embedding dimension {k}")));
            }
        }
        let conditioning = match (variant, style_dim) {
            (Variant::RandomStyle, Some(k)) => {
                let vectors = Array2::from_shape_simple_fn((data.len(), k), || {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    T::of(x)
                });
                Some(StyleStore::new(data.ids().to_vec(), vectors)?)
            }
            (Variant::Vanilla, _) => None,
            _ => data.styles().cloned(),
        };
        let generator = StyleGenerator::new(config.generator_config(style_dim), &mut rng)?;
        let discriminator = StyleDiscriminator::new(config.discriminator_config(style_dim), &mut rng)?;
        let order = (0..data.len()).collect();
        Ok(Trainer {
            g_opt: Adam::new(config.generator_optimizer),
            d_opt: Adam::new(config.discriminator_optimizer),
            config,
            generator,
            discriminator,
            data,
            embedding,
            conditioning,
            rng,
            order,
            cursor: usize::MAX,
            step: 0,
            history: Vec::new(),
            last_good: None,
        })
    }

    /// Resumes from saved network weights; optimizer moments restart.
    pub fn warm_start(&mut self, checkpoint: &Checkpoint<T>) -> Result<()> {
        if checkpoint.generator.config() != self.generator.config()
            || checkpoint.discriminator.config() != self.discriminator.config()
        {
            return Err(Error::input("checkpoint architecture differs from the training config"));
        }
        self.generator = checkpoint.generator.clone();
        self.discriminator = checkpoint.discriminator.clone();
        Ok(())
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn generator(&self) -> &StyleGenerator<T> {
        &self.generator
    }

    pub fn discriminator(&self) -> &StyleDiscriminator<T> {
        &self.discriminator
    }

    pub fn conditioning(&self) -> Option<&StyleStore<T>> {
        self.conditioning.as_ref()
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.history
    }

    /// Attaches evaluation metrics to the most recent history row.
    pub fn record_metrics(&mut self, fid_proxy: Option<f64>, style_fidelity: Option<f64>) {
        if let Some(row) = self.history.last_mut() {
            row.fid_proxy = fid_proxy.or(row.fid_proxy);
            row.style_fidelity = style_fidelity.or(row.style_fidelity);
        }
    }

    /// Next real minibatch, drawn from a reshuffled permutation each epoch.
    pub fn next_real_batch(&mut self) -> RealBatch<T> {
        let b = self.config.batch_size;
        let mut indices = Vec::with_capacity(b);
        while indices.len() < b {
            if self.cursor >= self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            indices.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        let images = self.data.images.select(Axis(0), &indices);
        let styles = self
            .conditioning
            .as_ref()
            .map(|store| store.vectors().select(Axis(0), &indices));
        let ids = indices.iter().map(|&i| self.data.ids[i].clone()).collect();
        RealBatch {
            indices,
            ids,
            images,
            styles,
        }
    }

    /// Confirms every row of `batch.styles` is the stored vector of its image.
    pub fn verify_pairing(&self, batch: &RealBatch<T>) -> Result<()> {
        let (Some(store), Some(styles)) = (&self.conditioning, &batch.styles) else {
            return if self.conditioning.is_none() && batch.styles.is_none() {
                Ok(())
            } else {
                Err(Error::state("batch conditioning does not match the variant"))
            };
        };
        for (row, id) in styles.rows().into_iter().zip(&batch.ids) {
            let index = store
                .index_of(id)
                .ok_or_else(|| Error::state(format!("batch image {id} has no stored style")))?;
            if store.row(index) != row {
                return Err(Error::state(format!("batch style for {id} differs from its stored vector")));
            }
        }
        Ok(())
    }

    /// Latents and conditioning vectors for `n` fakes.
    pub fn sample_fake_inputs(&mut self, n: usize) -> Result<(Array2<T>, Option<Array2<T>>)> {
        let rng = &mut self.rng;
        let z = Array2::from_shape_simple_fn((n, self.config.latent_dim), || {
            let x: f64 = StandardNormal.sample(rng);
            T::of(x)
        });
        let v = match &self.conditioning {
            None => None,
            Some(store) => {
                let mut v = Array2::zeros((n, store.dim()));
                for mut row in v.rows_mut() {
                    row.assign(&store.row(store.sample_index(&mut self.rng)?));
                }
                Some(v)
            }
        };
        Ok((z, v))
    }

    /// One discriminator update followed by one generator update.
    pub fn step(&mut self) -> Result<StepStats> {
        let real = self.next_real_batch();
        self.verify_pairing(&real)?;
        let batch = real.images.dim().0;

        let (z, v_fake) = self.sample_fake_inputs(batch)?;
        let fake_v = v_fake.as_ref().map(|v| v.view());
        let fake = self.generator.synthesize(z.view(), fake_v)?;
        let real_v = real.styles.as_ref().map(|v| v.view());
        self.discriminator.zero_grad();
        let d_loss = losses::accumulate_discriminator_loss(
            &mut self.discriminator,
            real.images.view(),
            real_v,
            fake.view(),
            fake_v,
        )?;
        let r1 = if self.config.r1_gamma > 0.0 && self.step % self.config.r1_interval == 0 {
            let gamma = self.config.r1_gamma * self.config.r1_interval as f64;
            Some(losses::accumulate_r1(&mut self.discriminator, real.images.view(), real_v, gamma)?)
        } else {
            None
        };
        self.d_opt.step(&mut self.discriminator, 1.0);

        let (z, v_fake) = self.sample_fake_inputs(batch)?;
        self.generator.zero_grad();
        let g_loss = losses::accumulate_generator_loss(
            &mut self.generator,
            &mut self.discriminator,
            z.view(),
            v_fake.as_ref().map(|v| v.view()),
        )?;
        self.g_opt.step(&mut self.generator, 1.0);

        self.step += 1;
        Ok(StepStats {
            step: self.step,
            d_loss,
            g_loss,
            r1,
        })
    }

    fn snapshot(&mut self) {
        self.last_good = Some((self.step, self.generator.clone(), self.discriminator.clone()));
    }

    /// Runs until the configured step count. On numeric divergence the
    /// networks roll back to the last logged step, that state is written to
    /// `checkpoint_path` when given, and the error is returned.
    pub fn run(&mut self, checkpoint_path: Option<&Path>, mut on_log: impl FnMut(&mut Self, &StepStats)) -> Result<()> {
        if self.last_good.is_none() {
            self.snapshot();
        }
        while self.step < self.config.steps {
            let stats = match self.step() {
                Ok(s) => s,
                Err(Error::Numeric(msg)) => {
                    let (good_step, g, d) = self.last_good.clone().expect("snapshot taken before the loop");
                    self.generator = g;
                    self.discriminator = d;
                    self.step = good_step;
                    let mut detail = format!("diverged after step {good_step}: {msg}");
                    if let Some(path) = checkpoint_path {
                        self.checkpoint().save(path)?;
                        detail.push_str(&format!("; last good checkpoint written to {}", path.display()));
                    }
                    return Err(Error::Numeric(detail));
                }
                Err(e) => return Err(e),
            };
            if stats.step % self.config.log_every == 0 || stats.step == self.config.steps {
                log::info!(
                    "step {} L_D {:.4} L_G {:.4}{}",
                    stats.step,
                    stats.d_loss,
                    stats.g_loss,
                    stats.r1.map(|r| format!(" R1 {r:.4}")).unwrap_or_default()
                );
                self.history.push(HistoryRow {
                    step: stats.step,
                    d_loss: stats.d_loss,
                    g_loss: stats.g_loss,
                    fid_proxy: None,
                    style_fidelity: None,
                });
                on_log(self, &stats);
                self.snapshot();
            }
            if let Some(path) = checkpoint_path {
                let every = self.config.checkpoint_every;
                if every > 0 && stats.step % every == 0 && stats.step < self.config.steps {
                    self.checkpoint().save(path)?;
                }
            }
        }
        if let Some(path) = checkpoint_path {
            self.checkpoint().save(path)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            embedding: self.embedding.clone(),
            styles: self.data.styles.clone(),
            conditioning: self.conditioning.clone(),
            history: self.history.clone(),
            dataset_fingerprint: self.data.fingerprint.clone(),
        }
    }
}

/// Trains one run end to end.
pub fn train<T: Scalar>(
    config: TrainingConfig,
    data: TrainingSet<T>,
    embedding: Option<EmbeddingModel<T>>,
    checkpoint_path: Option<&Path>,
) -> Result<Checkpoint<T>> {
    let mut trainer = Trainer::new(config, data, embedding)?;
    trainer.run(checkpoint_path, |_, _| {})?;
    Ok(trainer.checkpoint())
}

/// Path helper used by callers that keep one checkpoint per variant and seed.
pub fn run_path(dir: &Path, variant: Variant, seed: u64) -> PathBuf {
    dir.join(format!("{}-seed{seed}.ckpt", variant.name()))
}

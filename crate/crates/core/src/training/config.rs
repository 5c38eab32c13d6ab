use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::discriminator::{Conditioning, DiscriminatorConfig};
use crate::generator::GeneratorConfig;
use crate::nn::AdamConfig;
use crate::{Error, Result};

/// The four trained model families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Style-conditioned generator with a projection discriminator.
    Controlled,
    /// Unconditional baseline with no style path.
    Vanilla,
    /// Controlled architecture trained on fixed random vectors in place of
    /// embedded styles.
    RandomStyle,
    /// Style-conditioned generator with a concatenation discriminator.
    ConcatDisc,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Controlled, Variant::Vanilla, Variant::RandomStyle, Variant::ConcatDisc];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Controlled => "controlled",
            Variant::Vanilla => "vanilla",
            Variant::RandomStyle => "random_style",
            Variant::ConcatDisc => "concat_disc",
        }
    }

    pub fn is_conditioned(self) -> bool {
        self != Variant::Vanilla
    }

    /// Whether training needs the embedded style of every image.
    pub fn needs_embedding(self) -> bool {
        matches!(self, Variant::Controlled | Variant::ConcatDisc)
    }

    pub fn conditioning(self) -> Conditioning {
        match self {
            Variant::Vanilla => Conditioning::None,
            Variant::ConcatDisc => Conditioning::Concat,
            Variant::Controlled | Variant::RandomStyle => Conditioning::Projection,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::input(format!("unknown variant {s:?}; expected one of controlled, vanilla, random_style, concat_disc")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Logistic loss with the non-saturating generator objective.
    NonSaturating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub variant: Variant,
    pub resolution: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub generator_optimizer: AdamConfig,
    pub discriminator_optimizer: AdamConfig,
    pub r1_gamma: f64,
    /// Lazy regularization: the penalty is applied every this many steps,
    /// scaled up accordingly.
    pub r1_interval: usize,
    pub log_every: usize,
    /// Steps between checkpoint writes; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub latent_dim: usize,
    pub w_dim: usize,
    pub mapping_layers: usize,
    pub mapping_lr_mult: f64,
    pub generator_channels: Vec<usize>,
    pub style_modulations: usize,
    pub discriminator_channels: Vec<usize>,
    pub feature_dim: usize,
    /// Dimension of the random vectors when `random_style` runs without an
    /// embedding model; otherwise the embedding fixes it.
    pub style_dim: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            variant: Variant::Controlled,
            resolution: 32,
            batch_size: 16,
            steps: 4000,
            seed: 0,
            loss: LossKind::NonSaturating,
            generator_optimizer: AdamConfig::default(),
            discriminator_optimizer: AdamConfig::default(),
            r1_gamma: 10.0,
            r1_interval: 4,
            log_every: 50,
            checkpoint_every: 0,
            latent_dim: 64,
            w_dim: 64,
            mapping_layers: 8,
            mapping_lr_mult: 1.0,
            generator_channels: vec![64, 64, 32, 16],
            style_modulations: 4,
            discriminator_channels: vec![16, 32, 64],
            feature_dim: 64,
            style_dim: None,
        }
    }
}

impl TrainingConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: TrainingConfig =
            serde_json::from_str(&text).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        let expected_blocks = crate::generator::block_count(self.resolution).ok();
        match expected_blocks {
            None => problems.push(format!("resolution: {} is not a power of two ≥ 8", self.resolution)),
            Some(1) => problems.push("resolution: must be at least 8".into()),
            Some(b) => {
                if self.generator_channels.len() != b {
                    problems.push(format!(
                        "generator_channels: {} entries, resolution {} needs {b}",
                        self.generator_channels.len(),
                        self.resolution
                    ));
                }
                if self.discriminator_channels.len() != b - 1 {
                    problems.push(format!(
                        "discriminator_channels: {} entries, resolution {} needs {}",
                        self.discriminator_channels.len(),
                        self.resolution,
                        b - 1
                    ));
                }
            }
        }
        if self.batch_size == 0 {
            problems.push("batch_size: must be positive".into());
        }
        if self.steps == 0 {
            problems.push("steps: must be positive".into());
        }
        for (name, opt) in [
            ("generator_optimizer", &self.generator_optimizer),
            ("discriminator_optimizer", &self.discriminator_optimizer),
        ] {
            if !(opt.learning_rate > 0.0) {
                problems.push(format!("{name}.learning_rate: must be positive"));
            }
            if !(0.0..1.0).contains(&opt.beta1) || !(0.0..1.0).contains(&opt.beta2) {
                problems.push(format!("{name}: betas must lie in [0, 1)"));
            }
            if !(opt.epsilon > 0.0) {
                problems.push(format!("{name}.epsilon: must be positive"));
            }
        }
        if !(self.r1_gamma >= 0.0) {
            problems.push("r1_gamma: must be non-negative".into());
        }
        if self.r1_interval == 0 {
            problems.push("r1_interval: must be positive".into());
        }
        if self.log_every == 0 {
            problems.push("log_every: must be positive".into());
        }
        for (name, v) in [
            ("latent_dim", self.latent_dim),
            ("w_dim", self.w_dim),
            ("mapping_layers", self.mapping_layers),
            ("feature_dim", self.feature_dim),
        ] {
            if v == 0 {
                problems.push(format!("{name}: must be positive"));
            }
        }
        if self.generator_channels.contains(&0) || self.discriminator_channels.contains(&0) {
            problems.push("channels: widths must be positive".into());
        }
        if !(self.mapping_lr_mult > 0.0) {
            problems.push("mapping_lr_mult: must be positive".into());
        }
        match (self.variant, self.style_dim) {
            (Variant::Vanilla, Some(_)) => problems.push("style_dim: the vanilla variant takes no style".into()),
            (_, Some(0)) => problems.push("style_dim: must be positive".into()),
            _ => {}
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::input(format!("training config: {}", problems.join("; "))))
        }
    }

    pub fn generator_config(&self, style_dim: Option<usize>) -> GeneratorConfig {
        GeneratorConfig {
            latent_dim: self.latent_dim,
            w_dim: self.w_dim,
            mapping_layers: self.mapping_layers,
            style_dim,
            channels: self.generator_channels.clone(),
            mapping_lr_mult: self.mapping_lr_mult,
            style_modulations: self.style_modulations,
            adain_eps: 1e-8,
        }
    }

    pub fn discriminator_config(&self, style_dim: Option<usize>) -> DiscriminatorConfig {
        DiscriminatorConfig {
            resolution: self.resolution,
            channels: self.discriminator_channels.clone(),
            feature_dim: self.feature_dim,
            conditioning: self.variant.conditioning(),
            style_dim,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let c = TrainingConfig::default();
        c.validate().unwrap();
        let back: TrainingConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_offending_field_is_listed() {
        let c = TrainingConfig {
            batch_size: 0,
            steps: 0,
            resolution: 24,
            ..Default::default()
        };
        let msg = c.validate().unwrap_err().to_string();
        for field in ["batch_size", "steps", "resolution"] {
            assert!(msg.contains(field), "{msg}");
        }
    }

    #[test]
    fn partial_json_uses_defaults_and_rejects_unknown_fields() {
        let c: TrainingConfig = serde_json::from_str(r#"{"variant": "vanilla", "steps": 10}"#).unwrap();
        assert_eq!(c.variant, Variant::Vanilla);
        assert_eq!(c.batch_size, 16);
        assert!(serde_json::from_str::<TrainingConfig>(r#"{"stepz": 1}"#).is_err());
        assert_eq!("concat_disc".parse::<Variant>().unwrap(), Variant::ConcatDisc);
        assert!("other".parse::<Variant>().is_err());
    }
}

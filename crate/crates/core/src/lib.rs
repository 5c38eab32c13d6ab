pub mod discriminator;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod gram;
pub mod imaging;
pub mod nn;
pub mod style_space;
mod scalar;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Generator32 = generator::StyleGenerator<f32>;
pub type Generator64 = generator::StyleGenerator<f64>;
pub type Discriminator32 = discriminator::StyleDiscriminator<f32>;
pub type Discriminator64 = discriminator::StyleDiscriminator<f64>;
pub type Embedding32 = style_space::EmbeddingModel<f32>;
pub type Embedding64 = style_space::EmbeddingModel<f64>;
pub type Extractor32 = gram::GramExtractor<f32>;
pub type Extractor64 = gram::GramExtractor<f64>;
pub type Checkpoint32 = training::Checkpoint<f32>;
pub type Trainer32 = training::Trainer<f32>;

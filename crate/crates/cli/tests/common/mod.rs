#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use stylespace::commands::{self, TrainArgs};
use stylespace_core::training::Variant;

pub const TINY_CONFIG: &str = r#"{
    "resolution": 16,
    "steps": 4,
    "batch_size": 4,
    "latent_dim": 8,
    "w_dim": 8,
    "generator_channels": [8, 8, 8],
    "discriminator_channels": [8, 8],
    "feature_dim": 8,
    "log_every": 2
}"#;

/// Synthetic dataset, its embedding, and tiny checkpoints, built once per
/// test binary.
pub struct Fixture {
    pub root: PathBuf,
}

impl Fixture {
    pub fn manifest(&self) -> PathBuf {
        self.root.join("data/manifest.json")
    }

    pub fn embedding(&self) -> PathBuf {
        self.root.join("embedding")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("tiny.json")
    }

    pub fn checkpoint(&self, variant: Variant) -> PathBuf {
        self.root.join(format!("{}.ckpt", variant.name()))
    }
}

pub fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let root = tempfile::tempdir().unwrap().keep();
        let f = Fixture { root };
        commands::synth(&f.root.join("data"), 40, 32, 3).unwrap();
        commands::embed(&f.manifest(), &f.embedding(), 512, None).unwrap();
        std::fs::write(f.config(), TINY_CONFIG).unwrap();
        for variant in [Variant::Controlled, Variant::Vanilla] {
            commands::train(TrainArgs {
                config: Some(&f.config()),
                manifest: &f.manifest(),
                embedding: Some(&f.embedding()),
                out: &f.checkpoint(variant),
                seed: Some(0),
                variant: Some(variant),
            })
            .unwrap();
        }
        f
    })
}

pub fn bin() -> &'static Path {
    Path::new(env!("CARGO_BIN_EXE_stylespace"))
}

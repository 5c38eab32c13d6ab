use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainingConfig;
use crate::discriminator::{DiscriminatorConfig, StyleDiscriminator};
use crate::generator::{GeneratorConfig, StyleGenerator};
use crate::nn::persist;
use crate::style_space::{EmbeddingModel, StyleStore};
use crate::{Error, Result, Scalar};

pub const CHECKPOINT_FORMAT: &str = "stylespace-checkpoint/1";

/// One logged training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub fid_proxy: Option<f64>,
    pub style_fidelity: Option<f64>,
}

const HISTORY_HEADER: &str = "step,L_D,L_G,fid_proxy,style_fidelity";

impl HistoryRow {
    pub fn to_csv(rows: &[HistoryRow]) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step,
                r.d_loss,
                r.g_loss,
                opt(r.fid_proxy),
                opt(r.style_fidelity)
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Vec<HistoryRow>> {
        let mut lines = text.lines();
        if lines.next() != Some(HISTORY_HEADER) {
            return Err(Error::format("history csv", "unexpected header"));
        }
        let bad = |line: &str| Error::format("history csv", format!("bad row {line:?}"));
        lines
            .filter(|l| !l.is_empty())
            .map(|line| {
                let cells: Vec<&str> = line.split(',').collect();
                if cells.len() != 5 {
                    return Err(bad(line));
                }
                let opt = |c: &str| -> Result<Option<f64>> {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse().map(Some).map_err(|_| bad(line))
                    }
                };
                Ok(HistoryRow {
                    step: cells[0].parse().map_err(|_| bad(line))?,
                    d_loss: cells[1].parse().map_err(|_| bad(line))?,
                    g_loss: cells[2].parse().map_err(|_| bad(line))?,
                    fid_proxy: opt(cells[3])?,
                    style_fidelity: opt(cells[4])?,
                })
            })
            .collect()
    }
}

/// Everything needed to resume, evaluate or serve a trained run.
#[derive(Clone, Debug)]
pub struct Checkpoint<T: Scalar> {
    pub config: TrainingConfig,
    pub step: usize,
    pub generator: StyleGenerator<T>,
    pub discriminator: StyleDiscriminator<T>,
    pub embedding: Option<EmbeddingModel<T>>,
    /// Standardized embedded style of every training image.
    pub styles: Option<StyleStore<T>>,
    /// Vectors the networks were conditioned on while training.
    pub conditioning: Option<StyleStore<T>>,
    pub history: Vec<HistoryRow>,
    pub dataset_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    dtype: String,
    step: usize,
    dataset_fingerprint: String,
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
}

fn json<S: Serialize>(value: &S) -> Vec<u8> {
    serde_json::to_vec_pretty(value).expect("plain data serializes")
}

impl<T: Scalar> Checkpoint<T> {
    /// Style dimension the networks were built with.
    pub fn style_dim(&self) -> Option<usize> {
        self.generator.config().style_dim
    }

    /// Checks that every stored part agrees on the style dimension.
    pub fn validate(&self) -> Result<()> {
        let k = self.style_dim();
        if self.discriminator.config().style_dim != k {
            return Err(Error::format("checkpoint", "generator and discriminator style dims differ"));
        }
        let dims = [
            self.embedding.as_ref().map(|m| ("embedding", m.k())),
            self.styles.as_ref().map(|s| ("styles", s.dim())),
            self.conditioning.as_ref().map(|s| ("conditioning", s.dim())),
        ];
        for (what, dim) in dims.into_iter().flatten() {
            if k.is_some() && Some(dim) != k {
                return Err(Error::format(
                    "checkpoint",
                    format!("{what} has dimension {dim} but the networks use {k:?}"),
                ));
            }
        }
        Ok(())
    }

    /// Writes the archive to a temporary file beside `path`, then renames.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut entries: Vec<(&str, Vec<u8>)> = vec![
            (
                "manifest.json",
                json(&Manifest {
                    format: CHECKPOINT_FORMAT.into(),
                    dtype: T::DTYPE.into(),
                    step: self.step,
                    dataset_fingerprint: self.dataset_fingerprint.clone(),
                    generator: self.generator.config().clone(),
                    discriminator: self.discriminator.config().clone(),
                }),
            ),
            ("config.json", json(&self.config)),
            ("generator.safetensors", persist::to_safetensors(&self.generator)?),
            ("discriminator.safetensors", persist::to_safetensors(&self.discriminator)?),
            ("history.csv", HistoryRow::to_csv(&self.history).into_bytes()),
        ];
        if let Some(model) = &self.embedding {
            let (header, bin) = model.to_parts();
            entries.push(("embedding.json", header.into_bytes()));
            entries.push(("embedding.bin", bin));
        }
        if let Some(store) = &self.styles {
            entries.push(("styles.json", store.to_json()));
        }
        if let Some(store) = &self.conditioning {
            entries.push(("conditioning.json", store.to_json()));
        }

        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        {
            let mut builder = tar::Builder::new(tmp.as_file());
            for (name, bytes) in &entries {
                let mut header = tar::Header::new_gnu();
                header.set_size(bytes.len() as u64);
                header.set_mode(0o644);
                header.set_mtime(0);
                header.set_cksum();
                builder
                    .append_data(&mut header, name, bytes.as_slice())
                    .map_err(|e| Error::io(tmp.path(), e))?;
            }
            builder.finish().map_err(|e| Error::io(tmp.path(), e))?;
        }
        tmp.as_file().flush().map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut archive = tar::Archive::new(file);
        let mut parts: HashMap<String, Vec<u8>> = HashMap::new();
        for entry in archive.entries().map_err(|e| Error::io(path, e))? {
            let mut entry = entry.map_err(|e| Error::io(path, e))?;
            let name = entry
                .path()
                .map_err(|e| Error::io(path, e))?
                .to_string_lossy()
                .into_owned();
            let mut bytes = Vec::new();
            entry.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
            parts.insert(name, bytes);
        }
        let take = |name: &str| -> Result<&Vec<u8>> {
            parts
                .get(name)
                .ok_or_else(|| Error::format("checkpoint", format!("{} lacks {name}", path.display())))
        };
        let manifest: Manifest =
            serde_json::from_slice(take("manifest.json")?).map_err(|e| Error::format("checkpoint manifest", e))?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::format(
                "checkpoint",
                format!("format {:?}, expected {CHECKPOINT_FORMAT:?}", manifest.format),
            ));
        }
        let config: TrainingConfig =
            serde_json::from_slice(take("config.json")?).map_err(|e| Error::format("checkpoint config", e))?;
        // weights are overwritten immediately; the seed only fixes shapes
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut generator = StyleGenerator::new(manifest.generator, &mut rng)?;
        persist::load_safetensors(&mut generator, take("generator.safetensors")?)?;
        let mut discriminator = StyleDiscriminator::new(manifest.discriminator, &mut rng)?;
        persist::load_safetensors(&mut discriminator, take("discriminator.safetensors")?)?;
        let history = HistoryRow::from_csv(
            std::str::from_utf8(take("history.csv")?).map_err(|e| Error::format("history csv", e))?,
        )?;
        let embedding = match (parts.get("embedding.json"), parts.get("embedding.bin")) {
            (Some(h), Some(b)) => Some(EmbeddingModel::from_parts(
                std::str::from_utf8(h).map_err(|e| Error::format("embedding header", e))?,
                b,
            )?),
            (None, None) => None,
            _ => return Err(Error::format("checkpoint", "embedding header and matrix must come together")),
        };
        let store = |name: &str| -> Result<Option<StyleStore<T>>> {
            parts
                .get(name)
                .map(|b| StyleStore::from_json(b))
                .transpose()
        };
        let checkpoint = Checkpoint {
            config,
            step: manifest.step,
            generator,
            discriminator,
            embedding,
            styles: store("styles.json")?,
            conditioning: store("conditioning.json")?,
            history,
            dataset_fingerprint: manifest.dataset_fingerprint,
        };
        checkpoint.validate()?;
        Ok(checkpoint)
    }
}

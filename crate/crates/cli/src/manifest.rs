//! Dataset manifests: a root directory, image entries relative to it, and the
//! preprocessing that feeds the backbone.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stylespace_core::gram::{BackboneConfig, PreprocessSpec};
use stylespace_core::imaging::Raster;
use stylespace_core::synthetic::StyleParams;
use stylespace_core::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest root.
    pub path: PathBuf,
    /// Ground truth, present for synthetic data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<StyleParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Resolved against the manifest's own directory when relative.
    pub root: PathBuf,
    pub images: Vec<ManifestEntry>,
    #[serde(default)]
    pub preprocess: PreprocessSpec,
    #[serde(default)]
    pub backbone: BackboneConfig,
}

impl DatasetManifest {
    /// Reads and validates a manifest file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format("dataset manifest", e))?;
        if manifest.root.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            manifest.root = base.join(&manifest.root);
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Checks every entry and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::input(format!("manifest under {} lists no images", self.root.display())));
        }
        self.preprocess.validate()?;
        let mut problems = Vec::new();
        let mut seen = HashSet::new();
        for entry in &self.images {
            if entry.id.is_empty() {
                problems.push(format!("empty id for {}", entry.path.display()));
            } else if !seen.insert(entry.id.as_str()) {
                problems.push(format!("duplicate id {}", entry.id));
            }
            let full = self.path_of(entry);
            if !full.is_file() {
                problems.push(format!("missing file {}", full.display()));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::input(format!("{} manifest problem(s): {}", problems.len(), problems.join("; "))))
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.images.iter().map(|e| e.id.clone()).collect()
    }

    pub fn path_of(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Raw file contents in manifest order.
    pub fn read_bytes(&self) -> Result<Vec<Vec<u8>>> {
        self.images
            .iter()
            .map(|e| {
                let p = self.path_of(e);
                std::fs::read(&p).map_err(|err| Error::io(&p, err))
            })
            .collect()
    }

    /// Decodes every image; undecodable files are reported together.
    pub fn load_images(&self) -> Result<Vec<Raster>> {
        let mut images = Vec::with_capacity(self.len());
        let mut problems = Vec::new();
        for entry in &self.images {
            match Raster::open(&self.path_of(entry)) {
                Ok(r) => images.push(r),
                Err(e) => problems.push(format!("{}: {e}", entry.id)),
            }
        }
        if problems.is_empty() {
            Ok(images)
        } else {
            Err(Error::input(format!("could not decode {} image(s): {}", problems.len(), problems.join("; "))))
        }
    }
}

/// Writes `count` synthetic portraits as PNG files under `dir` together with
/// a manifest recording their ground-truth styles.
pub fn write_synthetic(dir: &Path, count: usize, size: usize, seed: u64) -> Result<DatasetManifest> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let sample = stylespace_core::synthetic::sample(i, size, seed);
        let rel = PathBuf::from("images").join(format!("{}.png", sample.id));
        sample.image.save_png(&dir.join(&rel))?;
        entries.push(ManifestEntry {
            id: sample.id,
            path: rel,
            style: Some(sample.style),
        });
    }
    let manifest = DatasetManifest {
        root: PathBuf::from("."),
        images: entries,
        preprocess: PreprocessSpec::with_resolution(size),
        backbone: BackboneConfig::default(),
    };
    manifest.save(&dir.join("manifest.json"))?;
    Ok(DatasetManifest {
        root: dir.to_path_buf(),
        ..manifest
    })
}

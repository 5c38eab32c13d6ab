//! Dense descriptor matrices on disk: `<stem>.bin` holds little-endian `f32`
//! rows, `<stem>.json` lists the row ids and descriptor length.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PreprocessSpec, RawStyleDescriptor};
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptorSidecar {
    pub image_ids: Vec<String>,
    pub descriptor_len: usize,
    pub dtype: String,
    pub byte_order: String,
    pub preprocessing: PreprocessSpec,
    pub backbone: String,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

/// Streams descriptors to disk one row at a time.
pub struct DescriptorWriter {
    stem: PathBuf,
    out: BufWriter<File>,
    sidecar: DescriptorSidecar,
}

impl DescriptorWriter {
    pub fn create(stem: &Path, descriptor_len: usize, preprocessing: PreprocessSpec, backbone: &str) -> Result<Self> {
        let (bin, _) = paths(stem);
        let file = File::create(&bin).map_err(|e| Error::io(&bin, e))?;
        Ok(DescriptorWriter {
            stem: stem.to_path_buf(),
            out: BufWriter::new(file),
            sidecar: DescriptorSidecar {
                image_ids: Vec::new(),
                descriptor_len,
                dtype: "f32".into(),
                byte_order: "little".into(),
                preprocessing,
                backbone: backbone.into(),
            },
        })
    }

    pub fn push<T: Scalar>(&mut self, descriptor: &RawStyleDescriptor<T>) -> Result<()> {
        if descriptor.len() != self.sidecar.descriptor_len {
            return Err(Error::input(format!(
                "descriptor for {} has length {}, archive expects {}",
                descriptor.image_id,
                descriptor.len(),
                self.sidecar.descriptor_len
            )));
        }
        let (bin, _) = paths(&self.stem);
        let bytes: Vec<u8> = descriptor
            .values
            .iter()
            .flat_map(|v| (v.as_f64() as f32).to_le_bytes())
            .collect();
        self.out.write_all(&bytes).map_err(|e| Error::io(&bin, e))?;
        self.sidecar.image_ids.push(descriptor.image_id.clone());
        Ok(())
    }

    pub fn finish(mut self) -> Result<DescriptorArchive> {
        let (bin, json) = paths(&self.stem);
        self.out.flush().map_err(|e| Error::io(&bin, e))?;
        let text = serde_json::to_string_pretty(&self.sidecar).expect("sidecar serializes");
        std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
        Ok(DescriptorArchive {
            bin,
            sidecar: self.sidecar,
        })
    }
}

/// Read access to a descriptor archive.
#[derive(Clone, Debug)]
pub struct DescriptorArchive {
    bin: PathBuf,
    sidecar: DescriptorSidecar,
}

impl DescriptorArchive {
    pub fn open(stem: &Path) -> Result<Self> {
        let (bin, json) = paths(stem);
        let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let sidecar: DescriptorSidecar =
            serde_json::from_str(&text).map_err(|e| Error::format("descriptor sidecar", e))?;
        let expected = (sidecar.image_ids.len() * sidecar.descriptor_len * 4) as u64;
        let actual = std::fs::metadata(&bin).map_err(|e| Error::io(&bin, e))?.len();
        if actual != expected {
            return Err(Error::format(
                "descriptor matrix",
                format!("{} holds {actual} bytes, sidecar implies {expected}", bin.display()),
            ));
        }
        Ok(DescriptorArchive { bin, sidecar })
    }

    pub fn sidecar(&self) -> &DescriptorSidecar {
        &self.sidecar
    }

    pub fn rows(&self) -> usize {
        self.sidecar.image_ids.len()
    }

    pub fn descriptor_len(&self) -> usize {
        self.sidecar.descriptor_len
    }

    /// Rows at `indices`, in the given order.
    pub fn read_rows<T: Scalar>(&self, indices: &[usize]) -> Result<Array2<T>> {
        let d = self.descriptor_len();
        let mut file = BufReader::new(File::open(&self.bin).map_err(|e| Error::io(&self.bin, e))?);
        let mut out = Array2::zeros((indices.len(), d));
        let mut buf = vec![0u8; d * 4];
        for (r, &i) in indices.iter().enumerate() {
            if i >= self.rows() {
                return Err(Error::input(format!("row {i} out of range ({} rows)", self.rows())));
            }
            file.seek(SeekFrom::Start((i * d * 4) as u64))
                .and_then(|_| file.read_exact(&mut buf))
                .map_err(|e| Error::io(&self.bin, e))?;
            for (slot, b) in out.row_mut(r).iter_mut().zip(buf.chunks_exact(4)) {
                *slot = T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
            }
        }
        Ok(out)
    }

    pub fn read_descriptor<T: Scalar>(&self, index: usize) -> Result<RawStyleDescriptor<T>> {
        let row = self.read_rows::<T>(&[index])?;
        Ok(RawStyleDescriptor {
            image_id: self.sidecar.image_ids[index].clone(),
            values: row.row(0).to_owned(),
        })
    }
}

/// Per-image descriptor cache keyed by extractor fingerprint and image bytes.
#[derive(Clone, Debug)]
pub struct DescriptorCache {
    dir: PathBuf,
}

impl DescriptorCache {
    pub const ENV_VAR: &'static str = "STYLESPACE_CACHE";

    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(DescriptorCache { dir })
    }

    pub fn from_env() -> Result<Option<Self>> {
        match std::env::var_os(Self::ENV_VAR) {
            Some(dir) if !dir.is_empty() => Self::new(PathBuf::from(dir)).map(Some),
            _ => Ok(None),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry(&self, fingerprint: &str, image_bytes: &[u8]) -> PathBuf {
        let mut h = Sha256::new();
        h.update(fingerprint.as_bytes());
        h.update([0u8]);
        h.update(image_bytes);
        let key: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        self.dir.join(format!("{key}.f32"))
    }

    pub fn get(&self, fingerprint: &str, image_bytes: &[u8], len: usize) -> Option<Array1<f32>> {
        let bytes = std::fs::read(self.entry(fingerprint, image_bytes)).ok()?;
        if bytes.len() != len * 4 {
            return None;
        }
        Some(
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        )
    }

    pub fn put(&self, fingerprint: &str, image_bytes: &[u8], values: &Array1<f32>) -> Result<()> {
        let path = self.entry(fingerprint, image_bytes);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        tmp.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_round_trip_and_truncation_detected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("desc");
        let mut w = DescriptorWriter::create(&stem, 3, PreprocessSpec::default(), "test").unwrap();
        for (i, id) in ["a", "b"].iter().enumerate() {
            w.push(&RawStyleDescriptor {
                image_id: id.to_string(),
                values: Array1::from(vec![i as f32, 1.5, -2.0]),
            })
            .unwrap();
        }
        assert!(w
            .push(&RawStyleDescriptor::<f32> {
                image_id: "bad".into(),
                values: Array1::zeros(2)
            })
            .is_err());
        let archive = w.finish().unwrap();
        let rows = archive.read_rows::<f64>(&[1, 0]).unwrap();
        assert_eq!(rows.row(0).to_vec(), vec![1.0, 1.5, -2.0]);
        assert_eq!(archive.read_descriptor::<f32>(0).unwrap().image_id, "a");

        let reopened = DescriptorArchive::open(&stem).unwrap();
        assert_eq!(reopened.sidecar().image_ids, vec!["a", "b"]);

        std::fs::write(stem.with_extension("bin"), [0u8; 5]).unwrap();
        assert!(DescriptorArchive::open(&stem).is_err());
    }

    #[test]
    fn cache_hits_only_on_same_key() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DescriptorCache::new(dir.path()).unwrap();
        let v = Array1::from(vec![1.0f32, 2.0]);
        cache.put("fp", b"img", &v).unwrap();
        assert_eq!(cache.get("fp", b"img", 2), Some(v));
        assert_eq!(cache.get("fp2", b"img", 2), None);
        assert_eq!(cache.get("fp", b"img", 3), None);
    }
}

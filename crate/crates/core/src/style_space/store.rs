use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Provenance, StyleVector};
use crate::{Error, Result, Scalar};

/// On-disk form: `{"ids": [...], "vectors": [[...], ...]}`.
#[derive(Serialize, Deserialize)]
struct StoreFile {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

/// Style vectors of the training images, keyed by image id.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleStore<T> {
    ids: Vec<String>,
    vectors: Array2<T>,
}

impl<T: Scalar> StyleStore<T> {
    pub fn new(ids: Vec<String>, vectors: Array2<T>) -> Result<Self> {
        if ids.len() != vectors.nrows() {
            return Err(Error::input(format!("{} ids for {} vectors", ids.len(), vectors.nrows())));
        }
        let mut sorted = ids.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::input("duplicate image ids in style store"));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("style store holds non-finite values"));
        }
        Ok(StyleStore { ids, vectors })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> ArrayView2<'_, T> {
        self.vectors.view()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn row(&self, index: usize) -> ArrayView1<'_, T> {
        self.vectors.row(index)
    }

    pub fn get(&self, id: &str) -> Option<StyleVector<T>> {
        self.index_of(id).map(|i| StyleVector {
            values: self.vectors.row(i).to_owned(),
            provenance: Provenance::Image(id.to_string()),
        })
    }

    /// Ids of the `k` nearest stored vectors (Euclidean), ties by ascending id.
    pub fn nearest(&self, query: &StyleVector<T>, k: usize) -> Result<Vec<String>> {
        if self.is_empty() {
            return Err(Error::state("nearest-neighbour query on an empty style store"));
        }
        if query.dim() != self.dim() {
            return Err(Error::input(format!("query dim {} ≠ store dim {}", query.dim(), self.dim())));
        }
        let mut scored: Vec<(f64, &String)> = self
            .vectors
            .rows()
            .into_iter()
            .zip(&self.ids)
            .map(|(row, id)| {
                let d: f64 = row
                    .iter()
                    .zip(query.values.iter())
                    .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
                    .sum();
                (d, id)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        Ok(scored.into_iter().take(k).map(|(_, id)| id.clone()).collect())
    }

    pub fn to_json(&self) -> Vec<u8> {
        let file = StoreFile {
            ids: self.ids.clone(),
            vectors: self
                .vectors
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|v| v.as_f64()).collect())
                .collect(),
        };
        serde_json::to_vec(&file).expect("store serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let file: StoreFile = serde_json::from_slice(bytes).map_err(|e| Error::format("style store", e))?;
        let dim = file.vectors.first().map(Vec::len).unwrap_or(0);
        if file.vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::format("style store", "ragged vectors"));
        }
        let flat = file.vectors.into_iter().flatten().map(T::of).collect();
        let vectors = Array2::from_shape_vec((file.ids.len(), dim), flat).map_err(|e| Error::format("style store", e))?;
        Self::new(file.ids, vectors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Uniform index into the store.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        if self.is_empty() {
            return Err(Error::state("sampling from an empty style store"));
        }
        Ok(rng.random_range(0..self.len()))
    }

    /// Uniform draw from the stored (empirical) style vectors.
    pub fn sample_style<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<StyleVector<T>> {
        let i = self.sample_index(rng)?;
        Ok(StyleVector {
            values: self.vectors.row(i).to_owned(),
            provenance: Provenance::Sampled,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> StyleStore<f64> {
        StyleStore::new(
            vec!["b".into(), "a".into(), "c".into()],
            array![[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]],
        )
        .unwrap()
    }

    #[test]
    fn json_round_trip() {
        let s = store();
        assert_eq!(StyleStore::<f64>::from_json(&s.to_json()).unwrap(), s);
        assert!(StyleStore::<f64>::from_json(br#"{"ids":["a","b"],"vectors":[[1.0],[1.0,2.0]]}"#).is_err());
    }

    #[test]
    fn exact_query_comes_first() {
        let s = store();
        let q = s.get("c").unwrap();
        assert_eq!(s.nearest(&q, 1).unwrap(), vec!["c"]);
    }

    #[test]
    fn ties_break_by_id_and_k_saturates() {
        let s = store();
        let q = StyleVector::new(array![0.5, 0.0], Provenance::External).unwrap();
        assert_eq!(s.nearest(&q, 10).unwrap(), vec!["a", "b", "c"]);
    }

    #[test]
    fn empty_store_is_state_error() {
        let s = StyleStore::<f64>::new(vec![], Array2::zeros((0, 2))).unwrap();
        let q = StyleVector::new(array![0.0, 0.0], Provenance::External).unwrap();
        assert!(matches!(s.nearest(&q, 1), Err(Error::State(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(s.sample_style(&mut rng), Err(Error::State(_))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(StyleStore::<f64>::new(vec!["x".into(), "x".into()], Array2::zeros((2, 1))).is_err());
    }

    #[test]
    fn single_vector_store_always_returns_it() {
        let s = StyleStore::new(vec!["only".into()], array![[2.0, 3.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            assert_eq!(s.sample_style(&mut rng).unwrap().values, array![2.0, 3.0]);
        }
    }
}

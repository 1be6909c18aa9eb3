use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{AutodiffError, Mat, Tape, Var};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.by_name.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value.as_standard_layout().into_owned());
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Mat] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Zero matrices shaped like every parameter.
    pub fn zeros_like(&self) -> Vec<Mat> {
        self.values.iter().map(|v| Array2::zeros(v.raw_dim())).collect()
    }

    /// Registers every parameter on `tape` by reference, in store order.
    pub fn register<'t>(&'t self, tape: &Tape<'t>) -> Vec<Var> {
        self.values.iter().map(|v| tape.param(v)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn to_checkpoint(&self, meta: Option<serde_json::Value>) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            meta,
            params: self
                .iter()
                .map(|(_, name, v)| CheckpointEntry {
                    name: name.to_string(),
                    shape: vec![v.nrows(), v.ncols()],
                    values: v.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, AutodiffError> {
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(AutodiffError::Checkpoint(format!(
                "unsupported format version {}",
                ck.format_version
            )));
        }
        let mut store = ParamStore::new();
        for e in &ck.params {
            let [r, c] = e.shape[..] else {
                return Err(AutodiffError::Checkpoint(format!(
                    "{}: expected a 2-d shape, got {:?}",
                    e.name, e.shape
                )));
            };
            let m = Array2::from_shape_vec((r, c), e.values.clone()).map_err(|_| {
                AutodiffError::Checkpoint(format!(
                    "{}: {} values do not fill shape {:?}",
                    e.name,
                    e.values.len(),
                    e.shape
                ))
            })?;
            if store.by_name.contains_key(&e.name) {
                return Err(AutodiffError::Checkpoint(format!("duplicate name {}", e.name)));
            }
            store.add(e.name.clone(), m);
        }
        Ok(store)
    }

    pub fn save_json(&self, path: &Path, meta: Option<serde_json::Value>) -> Result<(), AutodiffError> {
        let ck = self.to_checkpoint(meta);
        fs::write(path, serde_json::to_vec(&ck)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<(Self, Option<serde_json::Value>), AutodiffError> {
        let ck: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        Ok((Self::from_checkpoint(&ck)?, ck.meta))
    }
}

/// On-disk parameter manifest: ordered `(name, shape, row-major values)` triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
    pub params: Vec<CheckpointEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut s = ParamStore::new();
        s.add("w", array![[0.1, -2.5e-17], [3.0, 1.0 / 3.0]]);
        s.add("b", array![[f64::MIN_POSITIVE, 7.0]]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        s.save_json(&p, Some(serde_json::json!({"hidden": 8}))).unwrap();
        let (back, meta) = ParamStore::load_json(&p).unwrap();
        assert_eq!(back, s);
        assert_eq!(meta.unwrap()["hidden"], 8);
    }

    #[test]
    fn rejects_bad_manifests() {
        let mut ck = ParamStore::new().to_checkpoint(None);
        ck.format_version = 99;
        assert!(ParamStore::from_checkpoint(&ck).is_err());
        let ck = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            meta: None,
            params: vec![CheckpointEntry {
                name: "w".into(),
                shape: vec![2, 2],
                values: vec![1.0; 3],
            }],
        };
        assert!(matches!(
            ParamStore::from_checkpoint(&ck),
            Err(AutodiffError::Checkpoint(_))
        ));
    }
}

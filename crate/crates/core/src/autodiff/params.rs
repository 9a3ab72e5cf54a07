use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Handle to a tensor held by a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
///
/// Names are unique and insertion order is preserved, so the JSON form is
/// stable across runs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

/// JSON document `{"tensors": [...]}`.
#[derive(Serialize, Deserialize)]
pub struct TensorDocument {
    tensors: Vec<TensorRecord>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(ParamId)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn by_name(&self, name: &str) -> Result<&Matrix> {
        Ok(self.get(self.id(name)?))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn to_document(&self) -> TensorDocument {
        TensorDocument {
            tensors: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(name, m)| TensorRecord {
                    name: name.clone(),
                    rows: m.rows(),
                    cols: m.cols(),
                    values: m.values().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: TensorDocument) -> Result<Self> {
        let mut store = ParamStore::new();
        for t in doc.tensors {
            if store.names.contains(&t.name) {
                return Err(Error::InvalidMatrix(format!("duplicate tensor {}", t.name)));
            }
            let m = Matrix::from_vec(t.rows, t.cols, t.values)?;
            if !m.is_finite() {
                return Err(Error::InvalidMatrix(format!("non-finite tensor {}", t.name)));
            }
            store.insert(t.name, m);
        }
        Ok(store)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(s)?)
    }
}

//! In-memory tensor collections.
//!
//! [`DenseTensor`] holds row-major f64 values plus the storage dtype it was
//! read from (or will be written as). [`TensorMap`] is a named, lexicographic
//! collection of tensors representing a checkpoint, a delta, or an adapter
//! set. Both are immutable after construction and safe to share across
//! threads.

use std::collections::BTreeMap;

use crate::dtype::DType;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    dtype: DType,
    data: Vec<f64>,
}

impl DenseTensor {
    /// Build a tensor, checking that `shape` is consistent with `data`.
    /// Dimensions must be ≥ 1; a rank-0 shape (`[]`) denotes a scalar.
    pub fn new(shape: Vec<usize>, dtype: DType, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidTensor {
                tensor: String::new(),
                reason: format!("zero-sized dimension in shape {shape:?}"),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidTensor {
                tensor: String::new(),
                reason: format!(
                    "shape {shape:?} implies {numel} elements but buffer holds {}",
                    data.len()
                ),
            });
        }
        Ok(DenseTensor { shape, dtype, data })
    }

    pub fn zeros(shape: Vec<usize>, dtype: DType) -> Self {
        let numel = shape.iter().product();
        DenseTensor {
            shape,
            dtype,
            data: vec![0.0; numel],
        }
    }

    /// 2-D convenience constructor (row-major).
    pub fn from_matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix buffer size mismatch");
        DenseTensor {
            shape: vec![rows, cols],
            dtype: DType::F64,
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Rows of a 2-D tensor. Panics if not 2-D.
    pub fn rows(&self) -> usize {
        assert!(self.is_matrix());
        self.shape[0]
    }

    /// Columns of a 2-D tensor. Panics if not 2-D.
    pub fn cols(&self) -> usize {
        assert!(self.is_matrix());
        self.shape[1]
    }

    /// Same values, different storage dtype tag.
    pub fn with_dtype(&self, dtype: DType) -> Self {
        DenseTensor {
            shape: self.shape.clone(),
            dtype,
            data: self.data.clone(),
        }
    }

    /// Index and value of the first NaN/Inf element, if any.
    pub fn first_non_finite(&self) -> Option<(usize, f64)> {
        self.data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
            .map(|(i, v)| (i, *v))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Named collection of tensors plus free-form string metadata.
///
/// Iteration order is lexicographic by tensor name, which makes every
/// downstream traversal deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorMap {
    entries: BTreeMap<String, DenseTensor>,
    metadata: BTreeMap<String, String>,
}

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a tensor. Names must be non-empty and unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: DenseTensor) -> Result<()> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::InvalidTensor {
                tensor: name,
                reason: "tensor name is empty".into(),
            });
        }
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidTensor {
                tensor: name,
                reason: "duplicate tensor name".into(),
            });
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&DenseTensor> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Lexicographic iteration over (name, tensor).
    pub fn iter(&self) -> impl Iterator<Item = (&String, &DenseTensor)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    /// First tensor containing a NaN/Inf value, with element index.
    pub fn first_non_finite(&self) -> Option<(&String, usize, f64)> {
        self.entries
            .iter()
            .find_map(|(name, t)| t.first_non_finite().map(|(i, v)| (name, i, v)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_buffer_consistency() {
        assert!(DenseTensor::new(vec![2, 3], DType::F32, vec![0.0; 6]).is_ok());
        assert!(DenseTensor::new(vec![2, 3], DType::F32, vec![0.0; 5]).is_err());
        assert!(DenseTensor::new(vec![2, 0], DType::F32, vec![]).is_err());
        // rank-0 scalar
        assert!(DenseTensor::new(vec![], DType::F64, vec![1.5]).is_ok());
    }

    #[test]
    fn map_rejects_empty_and_duplicate_names() {
        let mut m = TensorMap::new();
        let t = DenseTensor::zeros(vec![1], DType::F32);
        assert!(m.insert("", t.clone()).is_err());
        m.insert("w", t.clone()).unwrap();
        assert!(m.insert("w", t).is_err());
    }

    #[test]
    fn iteration_is_lexicographic() {
        let mut m = TensorMap::new();
        for name in ["b", "a", "c.2", "c.10"] {
            m.insert(name, DenseTensor::zeros(vec![1], DType::F32))
                .unwrap();
        }
        let names: Vec<_> = m.names().cloned().collect();
        assert_eq!(names, ["a", "b", "c.10", "c.2"]);
    }

    #[test]
    fn non_finite_detection() {
        let t = DenseTensor::new(vec![3], DType::F64, vec![1.0, f64::INFINITY, 2.0]).unwrap();
        assert_eq!(t.first_non_finite(), Some((1, f64::INFINITY)));
    }
}

//! Checkpoint-level task-vector algebra: extraction by subtraction, scaled
//! application, and linear combination, applied name-wise across tensor maps.
//!
//! All arithmetic runs in float64. Summation order is fixed (argument order),
//! so results are deterministic for a fixed call.

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, TensorMap};

/// Where a task vector came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub base_id: String,
    /// Fine-tuned checkpoint id, or "lora-merge" for adapter-derived deltas.
    pub finetuned_id: String,
    pub created_by: String,
}

impl Provenance {
    pub fn unknown(created_by: &str) -> Self {
        Provenance {
            base_id: "unknown".into(),
            finetuned_id: "unknown".into(),
            created_by: created_by.into(),
        }
    }
}

/// A tensor map semantically tagged as a weight difference.
#[derive(Debug, Clone)]
pub struct TaskVector {
    delta: TensorMap,
    provenance: Provenance,
}

impl TaskVector {
    pub fn new(delta: TensorMap, provenance: Provenance) -> Self {
        TaskVector { delta, provenance }
    }

    pub fn delta(&self) -> &TensorMap {
        &self.delta
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Reinterpret a container as a task vector, picking provenance out of
    /// its metadata when present.
    pub fn from_container(map: TensorMap) -> Self {
        let get = |key: &str| {
            map.metadata()
                .get(key)
                .cloned()
                .unwrap_or_else(|| "unknown".into())
        };
        let provenance = Provenance {
            base_id: get("base_id"),
            finetuned_id: get("finetuned_id"),
            created_by: get("created_by"),
        };
        TaskVector {
            delta: map,
            provenance,
        }
    }

    /// Container representation with provenance stored in the metadata.
    pub fn into_container(self) -> TensorMap {
        let mut map = self.delta;
        map.set_metadata("base_id", self.provenance.base_id);
        map.set_metadata("finetuned_id", self.provenance.finetuned_id);
        map.set_metadata("created_by", self.provenance.created_by);
        map
    }
}

fn check_same_shape(name: &str, a: &DenseTensor, b: &DenseTensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            tensor: name.to_string(),
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Δθ = θ_ft − θ_pt, name-wise. Requires identical name sets and shapes;
/// a name-set mismatch reports the symmetric difference.
pub fn diff(finetuned: &TensorMap, base: &TensorMap) -> Result<TaskVector> {
    let only_ft: Vec<String> = finetuned
        .names()
        .filter(|n| !base.contains(n))
        .cloned()
        .collect();
    let only_base: Vec<String> = base
        .names()
        .filter(|n| !finetuned.contains(n))
        .cloned()
        .collect();
    if !only_ft.is_empty() || !only_base.is_empty() {
        return Err(Error::NameSetMismatch {
            only_left: only_ft,
            only_right: only_base,
        });
    }

    let mut delta = TensorMap::new();
    for (name, ft) in finetuned.iter() {
        let b = base.get(name).expect("name sets verified identical");
        check_same_shape(name, b, ft)?;
        let values: Vec<f64> = ft.data().iter().zip(b.data()).map(|(f, p)| f - p).collect();
        let dtype = ft.dtype().promote(b.dtype());
        let tensor =
            DenseTensor::new(ft.shape().to_vec(), dtype, values).expect("shape already validated");
        delta.insert(name.clone(), tensor)?;
    }
    Ok(TaskVector::new(delta, Provenance::unknown("diff")))
}

/// θ + scale·Δθ on every tensor covered by the vector; the rest pass through
/// bit-identically. A scale of zero returns the base unchanged.
pub fn apply(base: &TensorMap, vec: &TaskVector, scale: f64) -> Result<TensorMap> {
    for (name, d) in vec.delta.iter() {
        match base.get(name) {
            None => {
                return Err(Error::UnknownTensor {
                    tensor: name.clone(),
                    context: "task vector covers a tensor absent from the base checkpoint".into(),
                })
            }
            Some(b) => check_same_shape(name, b, d)?,
        }
    }
    if scale == 0.0 {
        return Ok(base.clone());
    }

    let mut out = TensorMap::new();
    for (k, v) in base.metadata() {
        out.set_metadata(k.clone(), v.clone());
    }
    for (name, b) in base.iter() {
        let tensor = match vec.delta.get(name) {
            Some(d) => {
                let values: Vec<f64> = b
                    .data()
                    .iter()
                    .zip(d.data())
                    .map(|(x, dx)| x + scale * dx)
                    .collect();
                let dtype = b.dtype().promote(d.dtype());
                DenseTensor::new(b.shape().to_vec(), dtype, values).expect("shape validated")
            }
            None => b.clone(),
        };
        out.insert(name.clone(), tensor)?;
    }
    Ok(out)
}

/// Name-wise weighted sum of task vectors with union semantics: a name
/// missing from a vector contributes nothing (no zero term is added).
/// Summation runs in argument order.
pub fn combine(parts: &[(&TaskVector, f64)]) -> Result<TaskVector> {
    let mut names: Vec<&String> = Vec::new();
    for (vec, _) in parts {
        for name in vec.delta.names() {
            if !names.contains(&name) {
                names.push(name);
            }
        }
    }
    names.sort();

    let mut delta = TensorMap::new();
    for name in names {
        let mut acc: Option<(Vec<f64>, Vec<usize>, crate::dtype::DType)> = None;
        for (vec, scale) in parts {
            let Some(t) = vec.delta.get(name) else {
                continue;
            };
            match &mut acc {
                None => {
                    let values: Vec<f64> = t.data().iter().map(|x| scale * x).collect();
                    acc = Some((values, t.shape().to_vec(), t.dtype()));
                }
                Some((values, shape, dtype)) => {
                    if t.shape() != shape.as_slice() {
                        return Err(Error::ShapeMismatch {
                            tensor: name.clone(),
                            expected: shape.clone(),
                            got: t.shape().to_vec(),
                        });
                    }
                    for (a, x) in values.iter_mut().zip(t.data()) {
                        *a += scale * x;
                    }
                    *dtype = dtype.promote(t.dtype());
                }
            }
        }
        let (values, shape, dtype) = acc.expect("name came from some vector");
        delta.insert(
            name.clone(),
            DenseTensor::new(shape, dtype, values).expect("shape validated"),
        )?;
    }
    Ok(TaskVector::new(delta, Provenance::unknown("combine")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtype::DType;

    fn map_of(entries: &[(&str, Vec<usize>, Vec<f64>)]) -> TensorMap {
        let mut m = TensorMap::new();
        for (name, shape, data) in entries {
            m.insert(
                *name,
                DenseTensor::new(shape.clone(), DType::F32, data.clone()).unwrap(),
            )
            .unwrap();
        }
        m
    }

    #[test]
    fn identical_maps_give_zero_delta() {
        let m = map_of(&[("w", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0])]);
        let v = diff(&m, &m).unwrap();
        assert_eq!(v.delta().get("w").unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn diff_arithmetic() {
        let base = map_of(&[("w", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0])]);
        let ft = map_of(&[("w", vec![2, 2], vec![2.0, 2.0, 3.0, 3.0])]);
        let v = diff(&ft, &base).unwrap();
        assert_eq!(v.delta().get("w").unwrap().data(), &[1.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn diff_reports_symmetric_difference() {
        let a = map_of(&[("x", vec![1], vec![0.0]), ("y", vec![1], vec![0.0])]);
        let b = map_of(&[("y", vec![1], vec![0.0]), ("z", vec![1], vec![0.0])]);
        let err = diff(&a, &b).unwrap_err();
        match err {
            Error::NameSetMismatch {
                only_left,
                only_right,
            } => {
                assert_eq!(only_left, ["x"]);
                assert_eq!(only_right, ["z"]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn diff_rejects_shape_mismatch() {
        let a = map_of(&[("w", vec![2], vec![0.0, 0.0])]);
        let b = map_of(&[("w", vec![1, 2], vec![0.0, 0.0])]);
        assert!(matches!(diff(&a, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn apply_scale_zero_is_identity() {
        let base = map_of(&[("w", vec![2], vec![1.5, -2.5])]);
        let v = diff(&base, &base).unwrap();
        let out = apply(&base, &v, 0.0).unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn apply_inverse_pair_round_trips() {
        let base = map_of(&[("w", vec![3], vec![1.0, -0.5, 0.25])]);
        let ft = map_of(&[("w", vec![3], vec![0.9, 0.6, -1.0])]);
        let v = diff(&ft, &base).unwrap();
        let there = apply(&base, &v, 1.0).unwrap();
        let back = apply(&there, &v, -1.0).unwrap();
        for (a, b) in back
            .get("w")
            .unwrap()
            .data()
            .iter()
            .zip(base.get("w").unwrap().data())
        {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn apply_rejects_unknown_tensor() {
        let base = map_of(&[("w", vec![1], vec![0.0])]);
        let stray = TaskVector::new(
            map_of(&[("other", vec![1], vec![1.0])]),
            Provenance::unknown("test"),
        );
        assert!(matches!(
            apply(&base, &stray, 1.0),
            Err(Error::UnknownTensor { .. })
        ));
    }

    #[test]
    fn uncovered_tensors_pass_through_bit_identically() {
        let base = map_of(&[
            ("covered", vec![1], vec![2.0]),
            ("untouched", vec![2], vec![-0.0, 3.5]),
        ]);
        let v = TaskVector::new(
            map_of(&[("covered", vec![1], vec![1.0])]),
            Provenance::unknown("test"),
        );
        let out = apply(&base, &v, 2.0).unwrap();
        let a = out.get("untouched").unwrap().data();
        let b = base.get("untouched").unwrap().data();
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(out.get("covered").unwrap().data(), &[4.0]);
    }

    #[test]
    fn combine_cancels_and_distributes() {
        let v = TaskVector::new(
            map_of(&[("w", vec![2], vec![0.3, -0.7])]),
            Provenance::unknown("test"),
        );
        let zero = combine(&[(&v, 1.0), (&v, -1.0)]).unwrap();
        assert_eq!(zero.delta().get("w").unwrap().data(), &[0.0, 0.0]);

        let twice = combine(&[(&v, 2.0)]).unwrap();
        let sum = combine(&[(&v, 1.0), (&v, 1.0)]).unwrap();
        let a = twice.delta().get("w").unwrap().data();
        let b = sum.delta().get("w").unwrap().data();
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn combine_union_semantics() {
        let a = TaskVector::new(
            map_of(&[("x", vec![1], vec![1.0])]),
            Provenance::unknown("test"),
        );
        let b = TaskVector::new(
            map_of(&[("y", vec![1], vec![2.0])]),
            Provenance::unknown("test"),
        );
        let out = combine(&[(&a, 1.0), (&b, 3.0)]).unwrap();
        assert_eq!(out.delta().get("x").unwrap().data(), &[1.0]);
        assert_eq!(out.delta().get("y").unwrap().data(), &[6.0]);
    }

    #[test]
    fn combine_rejects_shape_conflict() {
        let a = TaskVector::new(
            map_of(&[("w", vec![2], vec![1.0, 1.0])]),
            Provenance::unknown("test"),
        );
        let b = TaskVector::new(
            map_of(&[("w", vec![1, 2], vec![1.0, 1.0])]),
            Provenance::unknown("test"),
        );
        assert!(matches!(
            combine(&[(&a, 1.0), (&b, 1.0)]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn provenance_round_trips_through_container() {
        let v = TaskVector::new(
            map_of(&[("w", vec![1], vec![1.0])]),
            Provenance {
                base_id: "base-a".into(),
                finetuned_id: "lora-merge".into(),
                created_by: "merge_lora".into(),
            },
        );
        let map = v.into_container();
        let back = TaskVector::from_container(map);
        assert_eq!(back.provenance().base_id, "base-a");
        assert_eq!(back.provenance().finetuned_id, "lora-merge");
        assert_eq!(back.provenance().created_by, "merge_lora");
    }
}

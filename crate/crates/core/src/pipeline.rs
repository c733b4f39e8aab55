//! End-to-end checkpoint editing: task alignment, per-layer knowledge
//! separation (SVD → project → filter → reconstruct), and the final scaled
//! negation, plus the plain-negation and unfiltered baseline modes.
//!
//! Layer treatment is parallel across matched tensors; per-layer results are
//! deterministic and assembled in lexicographic order, so the output is
//! independent of thread count.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::container::read_container;
use crate::error::{Error, Result};
use crate::linalg::{filter_spectrum, project_delta, reconstruct_delta, thin_svd};
use crate::pattern::any_match;
use crate::recipe::{EditMode, EditRecipe, NonMatchingPolicy};
use crate::task_vectors::{apply, TaskVector};
use crate::tensor::{DenseTensor, TensorMap};

/// Per-layer observability for SVD-treated tensors.
#[derive(Debug, Clone, Serialize)]
pub struct LayerRecord {
    pub layer_name: String,
    pub rank: usize,
    /// ξ = xi_fraction · max|S_task| for this layer.
    pub xi_value: f64,
    pub kept_count: usize,
    pub total_count: usize,
    /// Frobenius² of kept entries over total; 1.0 for an all-zero spectrum.
    pub kept_energy_fraction: f64,
    pub delta_norm_before: f64,
    pub delta_norm_after: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EditReport {
    pub mode: EditMode,
    pub lambda: f64,
    pub xi_fraction: f64,
    pub layers: Vec<LayerRecord>,
    pub warnings: Vec<String>,
    /// Wall-clock time; not serialized so report files stay byte-identical
    /// across reruns.
    #[serde(skip)]
    pub elapsed: Duration,
}

impl EditReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// θ'_pt = θ_pt + Δθ_aux, or the base unchanged when no auxiliary delta is
/// given.
pub fn align(base: &TensorMap, aux: Option<&TaskVector>) -> Result<TensorMap> {
    match aux {
        Some(vec) => apply(base, vec, 1.0),
        None => Ok(base.clone()),
    }
}

/// Run an edit on already-loaded inputs. `recipe` supplies mode, λ, ξ, layer
/// patterns, and the non-matching policy; its paths are not consulted.
pub fn edit_checkpoint(
    recipe: &EditRecipe,
    base: &TensorMap,
    aux: Option<&TaskVector>,
    task: &TaskVector,
) -> Result<(TensorMap, EditReport)> {
    recipe.validate()?;
    let start = Instant::now();
    let mut warnings = Vec::new();

    let (output, layers) = match recipe.mode {
        EditMode::Negation => {
            if aux.is_some() {
                warnings.push("negation mode ignores the auxiliary delta".into());
            }
            (apply(base, task, -recipe.lambda)?, Vec::new())
        }
        EditMode::EthosUf => {
            let aligned = align(base, aux)?;
            (apply(&aligned, task, -recipe.lambda)?, Vec::new())
        }
        EditMode::Ethos => {
            if recipe.xi_fraction == 0.0 {
                warnings.push(
                    "xi_fraction = 0 keeps every component; this edit is equivalent to ethos-uf"
                        .into(),
                );
            }
            let aligned = align(base, aux)?;
            ethos_edit(recipe, &aligned, task, &mut warnings)?
        }
    };

    let report = EditReport {
        mode: recipe.mode,
        lambda: recipe.lambda,
        xi_fraction: recipe.xi_fraction,
        layers,
        warnings,
        elapsed: start.elapsed(),
    };
    Ok((output, report))
}

/// Read the recipe's inputs and run the edit. The caller writes the output
/// checkpoint and report where the recipe says.
pub fn run_edit(recipe: &EditRecipe) -> Result<(TensorMap, EditReport)> {
    let base = read_container(&recipe.base_path)?;
    let aux = match &recipe.aux_delta_path {
        Some(path) => Some(TaskVector::from_container(read_container(path)?)),
        None => None,
    };
    let task = TaskVector::from_container(read_container(&recipe.task_delta_path)?);
    edit_checkpoint(recipe, &base, aux.as_ref(), &task)
}

fn ethos_edit(
    recipe: &EditRecipe,
    aligned: &TensorMap,
    task: &TaskVector,
    warnings: &mut Vec<String>,
) -> Result<(TensorMap, Vec<LayerRecord>)> {
    // The task delta must target tensors that exist, with matching shapes.
    for (name, d) in task.delta().iter() {
        match aligned.get(name) {
            None => {
                return Err(Error::UnknownTensor {
                    tensor: name.clone(),
                    context: "task delta covers a tensor absent from the aligned checkpoint".into(),
                })
            }
            Some(t) if t.shape() != d.shape() => {
                return Err(Error::ShapeMismatch {
                    tensor: name.clone(),
                    expected: t.shape().to_vec(),
                    got: d.shape().to_vec(),
                });
            }
            _ => {}
        }
    }

    let matched: Vec<String> = aligned
        .iter()
        .filter(|(name, t)| {
            task.delta().contains(name) && t.is_matrix() && any_match(&recipe.layer_patterns, name)
        })
        .map(|(name, _)| name.clone())
        .collect();
    if matched.is_empty() {
        warnings.push(format!(
            "no delta-covered 2-D tensor matches layer_patterns {:?}",
            recipe.layer_patterns
        ));
    }

    let treated: Vec<(String, DenseTensor, LayerRecord)> = matched
        .par_iter()
        .map(|name| {
            let w = aligned.get(name).expect("matched name comes from aligned");
            let dw = task
                .delta()
                .get(name)
                .expect("matched name is delta-covered");
            let (tensor, record) = separate_layer(name, w, dw, recipe.lambda, recipe.xi_fraction)?;
            Ok((name.clone(), tensor, record))
        })
        .collect::<Result<_>>()?;

    let mut edited: std::collections::BTreeMap<String, DenseTensor> =
        std::collections::BTreeMap::new();
    let mut records = Vec::with_capacity(treated.len());
    for (name, tensor, record) in treated {
        edited.insert(name, tensor);
        records.push(record);
    }

    let mut out = TensorMap::new();
    for (k, v) in aligned.metadata() {
        out.set_metadata(k.clone(), v.clone());
    }
    for (name, t) in aligned.iter() {
        let tensor = if let Some(e) = edited.remove(name) {
            e
        } else if let Some(d) = task.delta().get(name) {
            match recipe.non_matching_policy {
                NonMatchingPolicy::NegatePlain => negate_plain(t, d, recipe.lambda),
                NonMatchingPolicy::Skip => t.clone(),
            }
        } else {
            t.clone()
        };
        out.insert(name.clone(), tensor)?;
    }
    Ok((out, records))
}

/// θ*_layer = θ'_layer − λ · U·filter(Uᵀ·ΔW·V)·Vᵀ, with the bookkeeping the
/// report wants.
fn separate_layer(
    name: &str,
    w: &DenseTensor,
    dw: &DenseTensor,
    lambda: f64,
    xi_fraction: f64,
) -> Result<(DenseTensor, LayerRecord)> {
    let basis = thin_svd(w, name)?;
    let spectrum = project_delta(&basis, dw)?;
    let xi_value = xi_fraction * spectrum.max_abs();
    let filtered = filter_spectrum(&spectrum, xi_fraction)?;

    let kept_count = spectrum
        .coeffs()
        .data()
        .iter()
        .filter(|v| v.abs() >= xi_value)
        .count();
    let total_count = spectrum.coeffs().numel();
    let total_energy: f64 = spectrum.coeffs().data().iter().map(|v| v * v).sum();
    let kept_energy: f64 = filtered.coeffs().data().iter().map(|v| v * v).sum();
    let kept_energy_fraction = if total_energy == 0.0 {
        1.0
    } else {
        kept_energy / total_energy
    };

    let reconstructed = reconstruct_delta(&basis, &filtered)?;
    let record = LayerRecord {
        layer_name: name.to_string(),
        rank: basis.rank(),
        xi_value,
        kept_count,
        total_count,
        kept_energy_fraction,
        delta_norm_before: dw.frobenius_norm(),
        delta_norm_after: reconstructed.frobenius_norm(),
    };

    // λ = 0 must leave the layer bit-identical.
    let values: Vec<f64> = if lambda == 0.0 {
        w.data().to_vec()
    } else {
        w.data()
            .iter()
            .zip(reconstructed.data())
            .map(|(x, r)| x - lambda * r)
            .collect()
    };
    let dtype = w.dtype().promote(dw.dtype());
    let tensor = DenseTensor::new(w.shape().to_vec(), dtype, values).expect("shape preserved");
    Ok((tensor, record))
}

fn negate_plain(t: &DenseTensor, d: &DenseTensor, lambda: f64) -> DenseTensor {
    if lambda == 0.0 {
        return t.clone();
    }
    let values: Vec<f64> = t
        .data()
        .iter()
        .zip(d.data())
        .map(|(x, dx)| x - lambda * dx)
        .collect();
    DenseTensor::new(t.shape().to_vec(), t.dtype().promote(d.dtype()), values)
        .expect("shapes validated upstream")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtype::DType;
    use crate::task_vectors::{diff, Provenance};

    fn recipe(mode: EditMode, lambda: f64, xi: f64) -> EditRecipe {
        EditRecipe {
            base_path: "base".into(),
            aux_delta_path: None,
            task_delta_path: "task".into(),
            mode,
            lambda,
            xi_fraction: xi,
            layer_patterns: vec!["*.weight".into()],
            non_matching_policy: NonMatchingPolicy::NegatePlain,
            dtype_policy: Default::default(),
            output_path: "out".into(),
        }
    }

    fn matrix_tensor(rows: usize, cols: usize, data: Vec<f64>) -> DenseTensor {
        DenseTensor::new(vec![rows, cols], DType::F32, data).unwrap()
    }

    fn fixture() -> (TensorMap, TaskVector) {
        let mut base = TensorMap::new();
        base.insert(
            "attn.weight",
            matrix_tensor(2, 2, vec![1.0, 0.5, -0.5, 2.0]),
        )
        .unwrap();
        base.insert(
            "norm.bias",
            DenseTensor::new(vec![2], DType::F32, vec![0.1, -0.2]).unwrap(),
        )
        .unwrap();

        let mut delta = TensorMap::new();
        delta
            .insert(
                "attn.weight",
                matrix_tensor(2, 2, vec![0.2, 0.0, 0.1, -0.3]),
            )
            .unwrap();
        delta
            .insert(
                "norm.bias",
                DenseTensor::new(vec![2], DType::F32, vec![0.01, 0.02]).unwrap(),
            )
            .unwrap();
        (base, TaskVector::new(delta, Provenance::unknown("test")))
    }

    #[test]
    fn align_without_aux_is_identity() {
        let (base, _) = fixture();
        let out = align(&base, None).unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn align_then_diff_recovers_aux() {
        let (base, task) = fixture();
        let aligned = align(&base, Some(&task)).unwrap();
        let recovered = diff(&aligned, &base).unwrap();
        for (name, t) in recovered.delta().iter() {
            let want = task.delta().get(name).unwrap();
            for (a, b) in t.data().iter().zip(want.data()) {
                assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn negation_warns_when_aux_present() {
        let (base, task) = fixture();
        let aux = task.clone();
        let (out, report) = edit_checkpoint(
            &recipe(EditMode::Negation, 0.5, 0.03),
            &base,
            Some(&aux),
            &task,
        )
        .unwrap();
        assert_eq!(report.warnings.len(), 1);
        // aux really ignored: same as running without it
        let (out2, _) =
            edit_checkpoint(&recipe(EditMode::Negation, 0.5, 0.03), &base, None, &task).unwrap();
        assert_eq!(out, out2);
    }

    #[test]
    fn ethos_with_zero_xi_warns_but_runs() {
        let (base, task) = fixture();
        let (_, report) =
            edit_checkpoint(&recipe(EditMode::Ethos, 0.5, 0.0), &base, None, &task).unwrap();
        assert!(report.warnings.iter().any(|w| w.contains("xi_fraction")));
    }

    #[test]
    fn ethos_uf_without_aux_equals_negation_bitwise() {
        let (base, task) = fixture();
        let (neg, _) =
            edit_checkpoint(&recipe(EditMode::Negation, 0.7, 0.03), &base, None, &task).unwrap();
        let (uf, _) =
            edit_checkpoint(&recipe(EditMode::EthosUf, 0.7, 0.03), &base, None, &task).unwrap();
        for (name, t) in neg.iter() {
            let other = uf.get(name).unwrap();
            for (a, b) in t.data().iter().zip(other.data()) {
                assert_eq!(a.to_bits(), b.to_bits(), "tensor {name}");
            }
        }
    }

    #[test]
    fn ethos_lambda_zero_is_identity_plus_aux() {
        let (base, task) = fixture();
        let aux = task.clone();
        let (out, _) = edit_checkpoint(
            &recipe(EditMode::Ethos, 0.0, 0.03),
            &base,
            Some(&aux),
            &task,
        )
        .unwrap();
        let aligned = align(&base, Some(&aux)).unwrap();
        assert_eq!(out, aligned);
    }

    #[test]
    fn ethos_fills_layer_records() {
        let (base, task) = fixture();
        let (_, report) =
            edit_checkpoint(&recipe(EditMode::Ethos, 0.6, 0.03), &base, None, &task).unwrap();
        assert_eq!(report.layers.len(), 1);
        let rec = &report.layers[0];
        assert_eq!(rec.layer_name, "attn.weight");
        assert_eq!(rec.rank, 2);
        assert_eq!(rec.total_count, 4);
        assert!(rec.kept_count <= rec.total_count);
        assert!(rec.kept_energy_fraction > 0.0 && rec.kept_energy_fraction <= 1.0);
    }

    #[test]
    fn skip_policy_passes_unmatched_tensors_through() {
        let (base, task) = fixture();
        let mut r = recipe(EditMode::Ethos, 0.9, 0.03);
        r.non_matching_policy = NonMatchingPolicy::Skip;
        let (out, _) = edit_checkpoint(&r, &base, None, &task).unwrap();
        // bias is delta-covered but not pattern-matched: skip keeps base bits
        let a = out.get("norm.bias").unwrap().data();
        let b = base.get("norm.bias").unwrap().data();
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn negate_plain_policy_applies_plain_negation() {
        let (base, task) = fixture();
        let (out, _) =
            edit_checkpoint(&recipe(EditMode::Ethos, 2.0, 0.03), &base, None, &task).unwrap();
        let bias = out.get("norm.bias").unwrap().data();
        assert!((bias[0] - (0.1 - 2.0 * 0.01)).abs() < 1e-6);
        assert!((bias[1] - (-0.2 - 2.0 * 0.02)).abs() < 1e-6);
    }

    #[test]
    fn no_pattern_match_warns() {
        let (base, task) = fixture();
        let mut r = recipe(EditMode::Ethos, 0.5, 0.03);
        r.layer_patterns = vec!["*.nothing".into()];
        let (_, report) = edit_checkpoint(&r, &base, None, &task).unwrap();
        assert!(report
            .warnings
            .iter()
            .any(|w| w.contains("no delta-covered 2-D tensor")));
    }

    #[test]
    fn delta_over_unknown_tensor_errors() {
        let (base, _) = fixture();
        let mut delta = TensorMap::new();
        delta
            .insert("ghost.weight", matrix_tensor(2, 2, vec![0.0; 4]))
            .unwrap();
        let task = TaskVector::new(delta, Provenance::unknown("test"));
        let err =
            edit_checkpoint(&recipe(EditMode::Ethos, 0.5, 0.03), &base, None, &task).unwrap_err();
        assert!(matches!(err, Error::UnknownTensor { .. }));
    }
}

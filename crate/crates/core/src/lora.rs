//! Low-rank adapter handling: merging factor pairs into a dense task vector
//! and verifying the merge against the adapter's forward pass.
//!
//! On disk an adapter is an ordinary container holding, for each adapted
//! layer `<name>`, the tensors `<name>.lora_A` (r×k) and `<name>.lora_B`
//! (d×r), with the scaling numerator stored under the `lora_alpha` metadata
//! key (defaults to the rank, i.e. scale 1, when absent).

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::task_vectors::{Provenance, TaskVector};
use crate::tensor::{DenseTensor, TensorMap};

const LORA_A_SUFFIX: &str = ".lora_A";
const LORA_B_SUFFIX: &str = ".lora_B";
pub const ALPHA_METADATA_KEY: &str = "lora_alpha";

/// Relative tolerance for the forward-pass equivalence check, evaluated in
/// float64.
pub const FORWARD_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LoraPair {
    /// Down-projection factor, r×k.
    pub a: DenseTensor,
    /// Up-projection factor, d×r.
    pub b: DenseTensor,
}

#[derive(Debug, Clone)]
pub struct LoraAdapter {
    pairs: BTreeMap<String, LoraPair>,
    rank: usize,
    alpha: f64,
}

/// Scaling applied when folding B·A into a dense delta.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleMode {
    /// Multiply by alpha / rank (the adapter's training-time convention).
    AlphaOverRank,
    /// Multiply by 1: the raw factor product.
    Unit,
}

impl LoraAdapter {
    pub fn new(pairs: BTreeMap<String, LoraPair>, rank: usize, alpha: f64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidArgument {
                reason: "adapter rank must be >= 1".into(),
            });
        }
        for (layer, pair) in &pairs {
            if !pair.a.is_matrix() || !pair.b.is_matrix() {
                return Err(Error::InvalidTensor {
                    tensor: layer.clone(),
                    reason: "adapter factors must be 2-D".into(),
                });
            }
            if pair.a.rows() != rank {
                return Err(Error::InvalidTensor {
                    tensor: layer.clone(),
                    reason: format!(
                        "A factor has {} rows but the adapter rank is {rank}",
                        pair.a.rows()
                    ),
                });
            }
            if pair.b.cols() != rank {
                return Err(Error::InvalidTensor {
                    tensor: layer.clone(),
                    reason: format!(
                        "B factor has {} columns but the adapter rank is {rank}",
                        pair.b.cols()
                    ),
                });
            }
        }
        Ok(LoraAdapter { pairs, rank, alpha })
    }

    pub fn pairs(&self) -> &BTreeMap<String, LoraPair> {
        &self.pairs
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Parse the `.lora_A` / `.lora_B` naming convention out of a container.
    pub fn from_tensor_map(map: &TensorMap) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        let mut rank: Option<usize> = None;

        for (name, tensor) in map.iter() {
            let Some(layer) = name.strip_suffix(LORA_A_SUFFIX) else {
                continue;
            };
            let b_name = format!("{layer}{LORA_B_SUFFIX}");
            let b = map.get(&b_name).ok_or_else(|| Error::UnknownTensor {
                tensor: b_name.clone(),
                context: format!("adapter has '{name}' but no matching B factor"),
            })?;
            if !tensor.is_matrix() || !b.is_matrix() {
                return Err(Error::InvalidTensor {
                    tensor: layer.to_string(),
                    reason: "adapter factors must be 2-D".into(),
                });
            }
            let r = tensor.rows();
            match rank {
                None => rank = Some(r),
                Some(existing) if existing != r => {
                    return Err(Error::InvalidTensor {
                        tensor: layer.to_string(),
                        reason: format!("rank {r} differs from adapter rank {existing}"),
                    })
                }
                _ => {}
            }
            pairs.insert(
                layer.to_string(),
                LoraPair {
                    a: tensor.clone(),
                    b: b.clone(),
                },
            );
        }

        for name in map.names() {
            if name.ends_with(LORA_B_SUFFIX) {
                let layer = name.strip_suffix(LORA_B_SUFFIX).expect("suffix checked");
                if !pairs.contains_key(layer) {
                    return Err(Error::UnknownTensor {
                        tensor: name.clone(),
                        context: format!("adapter has '{name}' but no matching A factor"),
                    });
                }
            }
        }

        let rank = rank.ok_or_else(|| Error::InvalidArgument {
            reason: "container holds no .lora_A/.lora_B tensor pairs".into(),
        })?;
        let alpha = match map.metadata().get(ALPHA_METADATA_KEY) {
            Some(raw) => raw.parse::<f64>().map_err(|_| Error::InvalidArgument {
                reason: format!("metadata {ALPHA_METADATA_KEY}='{raw}' is not a number"),
            })?,
            None => rank as f64,
        };
        LoraAdapter::new(pairs, rank, alpha)
    }

    /// Container representation using the naming convention above.
    pub fn to_tensor_map(&self) -> TensorMap {
        let mut map = TensorMap::new();
        for (layer, pair) in &self.pairs {
            map.insert(format!("{layer}{LORA_A_SUFFIX}"), pair.a.clone())
                .expect("layer names unique");
            map.insert(format!("{layer}{LORA_B_SUFFIX}"), pair.b.clone())
                .expect("layer names unique");
        }
        map.set_metadata(ALPHA_METADATA_KEY, format!("{}", self.alpha));
        map
    }
}

/// Fold each factor pair into a dense per-layer delta: `ΔW = c · B·A`, with
/// c = alpha/rank or 1 depending on the mode.
pub fn merge_lora(adapter: &LoraAdapter, mode: ScaleMode) -> Result<TaskVector> {
    let scale = match mode {
        ScaleMode::AlphaOverRank => adapter.alpha / adapter.rank as f64,
        ScaleMode::Unit => 1.0,
    };

    let mut delta = TensorMap::new();
    for (layer, pair) in &adapter.pairs {
        if pair.b.cols() != pair.a.rows() {
            return Err(Error::ShapeMismatch {
                tensor: layer.clone(),
                expected: vec![pair.b.cols()],
                got: vec![pair.a.rows()],
            });
        }
        let b = Mat::from_tensor(&pair.b);
        let a = Mat::from_tensor(&pair.a);
        let mut merged = b.matmul(&a);
        if scale != 1.0 {
            for v in merged.data.iter_mut() {
                *v *= scale;
            }
        }
        let dtype = pair.b.dtype().promote(pair.a.dtype());
        let tensor = DenseTensor::new(vec![merged.rows, merged.cols], dtype, merged.data)
            .expect("product shape is consistent");
        delta.insert(layer.clone(), tensor)?;
    }

    Ok(TaskVector::new(
        delta,
        Provenance {
            base_id: "unknown".into(),
            finetuned_id: "lora-merge".into(),
            created_by: "merge_lora".into(),
        },
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerDeviation {
    pub layer: String,
    pub max_rel_deviation: f64,
}

/// Result of checking `(W0 + merged ΔW)·x == W0·x + B·(A·x)` on random
/// probes.
#[derive(Debug, Clone, Serialize)]
pub struct LoraForwardReport {
    pub layers: Vec<LayerDeviation>,
    pub tolerance: f64,
    pub probe_count: usize,
    pub seed: u64,
}

impl LoraForwardReport {
    pub fn passed(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.max_rel_deviation <= self.tolerance)
    }

    pub fn max_deviation(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.max_rel_deviation)
            .fold(0.0, f64::max)
    }
}

/// Probe the factorization algebra: for each adapted layer, the merged dense
/// delta (unit scale, as in the adapter forward pass) must act on random
/// inputs exactly like the two-step B·(A·x) path. Layers are probed in
/// lexicographic order from one seeded stream.
pub fn verify_lora_forward(
    adapter: &LoraAdapter,
    base: &TensorMap,
    probe_count: usize,
    seed: u64,
) -> Result<LoraForwardReport> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(adapter.pairs.len());

    for (layer, pair) in &adapter.pairs {
        let w0 = base.get(layer).ok_or_else(|| Error::UnknownTensor {
            tensor: layer.clone(),
            context: "adapter layer name absent from base checkpoint".into(),
        })?;
        if !w0.is_matrix() {
            return Err(Error::InvalidTensor {
                tensor: layer.clone(),
                reason: format!("base tensor must be 2-D, got shape {:?}", w0.shape()),
            });
        }
        let (d, k) = (w0.rows(), w0.cols());
        if pair.b.rows() != d || pair.a.cols() != k {
            return Err(Error::ShapeMismatch {
                tensor: layer.clone(),
                expected: vec![d, k],
                got: vec![pair.b.rows(), pair.a.cols()],
            });
        }

        let w0m = Mat::from_tensor(w0);
        let am = Mat::from_tensor(&pair.a);
        let bm = Mat::from_tensor(&pair.b);
        let merged = bm.matmul(&am);
        let mut combined = w0m.clone();
        for (c, m) in combined.data.iter_mut().zip(&merged.data) {
            *c += m;
        }

        let mut worst = 0.0_f64;
        for _ in 0..probe_count {
            let x: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
            let lhs = combined.matvec(&x);
            let ax = am.matvec(&x);
            let bax = bm.matvec(&ax);
            let w0x = w0m.matvec(&x);
            let rhs: Vec<f64> = w0x.iter().zip(&bax).map(|(p, q)| p + q).collect();

            let diff_norm = lhs
                .iter()
                .zip(&rhs)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rel = if diff_norm == 0.0 {
                0.0
            } else {
                diff_norm / rhs_norm.max(f64::MIN_POSITIVE)
            };
            worst = worst.max(rel);
        }
        layers.push(LayerDeviation {
            layer: layer.clone(),
            max_rel_deviation: worst,
        });
    }

    Ok(LoraForwardReport {
        layers,
        tolerance: FORWARD_TOLERANCE,
        probe_count,
        seed,
    })
}

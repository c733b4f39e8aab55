//! Declarative edit recipes, loaded from strict JSON (unknown keys are
//! rejected with an error naming the key).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::container::DtypePolicy;
use crate::error::{Error, Result};

/// How the final checkpoint is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditMode {
    /// Plain scaled negation of the task delta (aux ignored).
    Negation,
    /// Aux merge plus scaled negation, no spectral filtering.
    EthosUf,
    /// Aux merge, per-layer SVD, projection, magnitude filter, reconstruction,
    /// scaled negation of the reconstructed delta.
    Ethos,
}

impl std::fmt::Display for EditMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EditMode::Negation => "negation",
            EditMode::EthosUf => "ethos-uf",
            EditMode::Ethos => "ethos",
        };
        f.write_str(s)
    }
}

/// What happens to delta-covered tensors the layer patterns do not select.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonMatchingPolicy {
    /// Plain λ-scaled negation, as in the negation mode.
    #[default]
    NegatePlain,
    /// Leave them bit-identical to the aligned input.
    Skip,
}

pub const DEFAULT_XI_FRACTION: f64 = 0.03;

fn default_xi_fraction() -> f64 {
    DEFAULT_XI_FRACTION
}

/// Attention query/value projection weights, the layers adapters usually
/// target.
pub fn default_layer_patterns() -> Vec<String> {
    vec!["*.q_proj.weight".to_string(), "*.v_proj.weight".to_string()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRecipe {
    pub base_path: PathBuf,
    #[serde(default)]
    pub aux_delta_path: Option<PathBuf>,
    pub task_delta_path: PathBuf,
    pub mode: EditMode,
    pub lambda: f64,
    #[serde(default = "default_xi_fraction")]
    pub xi_fraction: f64,
    #[serde(default = "default_layer_patterns")]
    pub layer_patterns: Vec<String>,
    #[serde(default)]
    pub non_matching_policy: NonMatchingPolicy,
    #[serde(default)]
    pub dtype_policy: DtypePolicy,
    pub output_path: PathBuf,
}

impl EditRecipe {
    pub fn from_json_str(json: &str) -> Result<Self> {
        let recipe: EditRecipe = serde_json::from_str(json).map_err(|e| Error::InvalidRecipe {
            reason: e.to_string(),
        })?;
        recipe.validate()?;
        Ok(recipe)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Hard validation of numeric fields. Soft issues (see [`Self::warnings`])
    /// do not fail.
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidRecipe {
                reason: format!("lambda must be finite and >= 0, got {}", self.lambda),
            });
        }
        if !self.xi_fraction.is_finite() || self.xi_fraction < 0.0 {
            return Err(Error::InvalidRecipe {
                reason: format!(
                    "xi_fraction must be finite and >= 0, got {}",
                    self.xi_fraction
                ),
            });
        }
        Ok(())
    }
}

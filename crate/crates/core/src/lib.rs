//! Weight-space surgery for model checkpoints.
//!
//! The crate reads and writes checkpoints, deltas, and adapters in a
//! safetensors-compatible container, extracts task vectors (θ_ft − θ_pt or
//! merged LoRA factors), and rectifies a checkpoint by negating a task
//! vector — either verbatim or after separating it in the orthogonal basis
//! of the (aux-aligned) base weights: per-layer thin SVD, projection of the
//! delta onto the singular basis, magnitude filtering of the projected
//! coefficients, and reconstruction of the surviving components.
//!
//! All arithmetic runs in float64 regardless of storage dtype, and every
//! operation is bit-deterministic for fixed inputs, independent of thread
//! count.

pub mod container;
pub mod dtype;
pub mod error;
pub mod linalg;
pub mod lora;
pub mod pattern;
pub mod pipeline;
pub mod recipe;
pub mod spectrum;
pub mod synthetic;
pub mod task_vectors;
pub mod tensor;

pub use container::{read_container, write_container, DtypePolicy};
pub use dtype::DType;
pub use error::{Error, ErrorCategory, Result};
pub use linalg::{
    filter_spectrum, project_delta, reconstruct_delta, thin_svd, OrthogonalBasis,
    ProjectionSpectrum,
};
pub use lora::{merge_lora, verify_lora_forward, LoraAdapter, LoraForwardReport, ScaleMode};
pub use pipeline::{align, edit_checkpoint, run_edit, EditReport, LayerRecord};
pub use recipe::{EditMode, EditRecipe, NonMatchingPolicy};
pub use spectrum::{fraction_above, histogram, stats, Normalization, SpectrumHistogram};
pub use synthetic::{build_scenario, evaluate_separation, PlantedScenario, SeparationRecord};
pub use task_vectors::{apply, combine, diff, Provenance, TaskVector};
pub use tensor::{DenseTensor, TensorMap};

/// Default seed for every seeded operation exposed by the toolkit.
pub const DEFAULT_SEED: u64 = 42;

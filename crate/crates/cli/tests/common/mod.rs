//! Shared fixtures and process helpers for the CLI tests.

use std::path::{Path, PathBuf};
use std::process::Command;

use ethos_core::{DType, DenseTensor, DtypePolicy, TensorMap};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ethos")
}

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn ethos binary");
    Output {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8(out.stdout).expect("utf-8 stdout"),
        stderr: String::from_utf8(out.stderr).expect("utf-8 stderr"),
    }
}

pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> DenseTensor {
    DenseTensor::new(vec![rows, cols], DType::F32, data).unwrap()
}

pub fn vector(data: Vec<f64>) -> DenseTensor {
    DenseTensor::new(vec![data.len()], DType::F32, data).unwrap()
}

/// Quantize through f32 so fixtures hold exactly representable values.
pub fn q32(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| v as f32 as f64).collect()
}

pub fn write_map(path: &Path, map: &TensorMap) {
    ethos_core::write_container(map, path, DtypePolicy::Preserve).unwrap();
}

/// Deterministic value stream for fixture data.
pub fn stream(seed: u64) -> impl FnMut() -> f64 {
    let mut state = seed | 1;
    move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }
}

/// Checkpoint with three attention-style 2-D layers and a bias.
pub fn checkpoint(seed: u64, n: usize) -> TensorMap {
    let mut next = stream(seed);
    let mut map = TensorMap::new();
    for l in 0..3 {
        map.insert(
            format!("h.{l}.q_proj.weight"),
            matrix(n, n, q32(&(0..n * n).map(|_| next()).collect::<Vec<_>>())),
        )
        .unwrap();
    }
    map.insert(
        "h.0.bias",
        vector(q32(&(0..n).map(|_| next()).collect::<Vec<_>>())),
    )
    .unwrap();
    map
}

/// Like `checkpoint`, shifted by a small deterministic perturbation.
pub fn perturbed(base: &TensorMap, seed: u64) -> TensorMap {
    let mut next = stream(seed);
    let mut map = TensorMap::new();
    for (name, t) in base.iter() {
        let values = q32(&t
            .data()
            .iter()
            .map(|v| v + 0.05 * next())
            .collect::<Vec<_>>());
        map.insert(
            name.clone(),
            DenseTensor::new(t.shape().to_vec(), t.dtype(), values).unwrap(),
        )
        .unwrap();
    }
    map
}

/// LoRA adapter container targeting two of the checkpoint layers.
pub fn adapter_map(seed: u64, n: usize, r: usize) -> TensorMap {
    let mut next = stream(seed);
    let mut map = TensorMap::new();
    for l in 0..2 {
        map.insert(
            format!("h.{l}.q_proj.weight.lora_A"),
            matrix(r, n, q32(&(0..r * n).map(|_| next()).collect::<Vec<_>>())),
        )
        .unwrap();
        map.insert(
            format!("h.{l}.q_proj.weight.lora_B"),
            matrix(n, r, q32(&(0..n * r).map(|_| next()).collect::<Vec<_>>())),
        )
        .unwrap();
    }
    map.set_metadata("lora_alpha", "16");
    map
}

pub fn write_recipe(path: &Path, fields: serde_json::Value) -> PathBuf {
    std::fs::write(path, serde_json::to_string_pretty(&fields).unwrap()).unwrap();
    path.to_path_buf()
}

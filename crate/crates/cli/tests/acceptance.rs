//! Acceptance criterion 9: every subcommand, run twice on identical inputs
//! with `--threads 1` and `--threads 8`, produces byte-identical outputs
//! (output files and stdout). Also checks that no subcommand mutates its
//! input files.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use common::*;

/// Snapshot of every fixture file, for the no-mutation check.
fn snapshot(paths: &[PathBuf]) -> BTreeMap<PathBuf, Vec<u8>> {
    paths
        .iter()
        .map(|p| (p.clone(), std::fs::read(p).unwrap()))
        .collect()
}

/// Run one subcommand under each thread count twice; return the bytes of the
/// produced artifacts plus stdout, asserting success, and verify every
/// repetition matches the first byte for byte.
fn assert_deterministic(dir: &Path, args: &[&str], artifacts: &[&str], label: &str) {
    let mut reference: Option<(Vec<Vec<u8>>, String)> = None;
    for threads in ["1", "8"] {
        for repeat in 0..2 {
            for artifact in artifacts {
                let _ = std::fs::remove_file(dir.join(artifact));
            }
            let mut full = vec!["--threads", threads];
            full.extend_from_slice(args);
            let out = run(dir, &full);
            assert_eq!(
                out.code, 0,
                "{label} (threads={threads}, repeat={repeat}): {}",
                out.stderr
            );
            let bytes: Vec<Vec<u8>> = artifacts
                .iter()
                .map(|a| std::fs::read(dir.join(a)).unwrap())
                .collect();
            match &reference {
                None => reference = Some((bytes, out.stdout)),
                Some((ref_bytes, ref_stdout)) => {
                    for (i, (got, want)) in bytes.iter().zip(ref_bytes).enumerate() {
                        assert_eq!(
                            got, want,
                            "{label}: artifact '{}' differs at threads={threads}, repeat={repeat}",
                            artifacts[i]
                        );
                    }
                    assert_eq!(
                        &out.stdout, ref_stdout,
                        "{label}: stdout differs at threads={threads}, repeat={repeat}"
                    );
                }
            }
        }
    }
}

#[test]
fn criterion_9_subcommands_are_deterministic_across_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    // fixtures
    let base = checkpoint(0xBA5E, 12);
    let ft = perturbed(&base, 0xF7);
    let adapter = adapter_map(0xADA, 12, 3);
    write_map(&dir.join("base.safetensors"), &base);
    write_map(&dir.join("ft.safetensors"), &ft);
    write_map(&dir.join("adapter.safetensors"), &adapter);

    let recipe = write_recipe(
        &dir.join("recipe.json"),
        serde_json::json!({
            "base_path": "base.safetensors",
            "aux_delta_path": null,
            "task_delta_path": "delta.safetensors",
            "mode": "ethos",
            "lambda": 0.6,
            "xi_fraction": 0.03,
            "layer_patterns": ["*.q_proj.weight"],
            "non_matching_policy": "negate-plain",
            "dtype_policy": "preserve",
            "output_path": "edited.safetensors",
        }),
    );
    assert!(recipe.ends_with("recipe.json"));

    let inputs: Vec<PathBuf> = [
        "base.safetensors",
        "ft.safetensors",
        "adapter.safetensors",
        "recipe.json",
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect();
    let before = snapshot(&inputs);

    // diff produces the delta the other subcommands consume
    assert_deterministic(
        dir,
        &[
            "diff",
            "--base",
            "base.safetensors",
            "--finetuned",
            "ft.safetensors",
            "--out",
            "delta.safetensors",
        ],
        &["delta.safetensors"],
        "diff",
    );

    assert_deterministic(
        dir,
        &[
            "merge-lora",
            "--adapter",
            "adapter.safetensors",
            "--out",
            "merged.safetensors",
        ],
        &["merged.safetensors"],
        "merge-lora",
    );

    assert_deterministic(
        dir,
        &[
            "apply",
            "--base",
            "base.safetensors",
            "--vector",
            "delta.safetensors",
            "--scale",
            "-0.6",
            "--out",
            "applied.safetensors",
        ],
        &["applied.safetensors"],
        "apply",
    );

    assert_deterministic(
        dir,
        &["edit", "--recipe", "recipe.json", "--report", "report.json"],
        &["edited.safetensors", "report.json"],
        "edit",
    );

    assert_deterministic(
        dir,
        &[
            "inspect",
            "--base",
            "base.safetensors",
            "--task",
            "delta.safetensors",
            "--layer",
            "h.0.q_proj.weight",
            "--bins",
            "16",
            "--out",
            "hist.csv",
        ],
        &["hist.csv"],
        "inspect",
    );

    assert_deterministic(
        dir,
        &[
            "bench",
            "--d",
            "14",
            "--k",
            "10",
            "--seed",
            "42",
            "--undesired",
            "0,0",
            "--undesired",
            "2,5",
            "--general",
            "1,1",
            "--general",
            "3,4",
            "--noise-sigma",
            "1e-4",
            "--out",
            "bench.json",
        ],
        &["bench.json"],
        "bench",
    );

    assert_deterministic(
        dir,
        &[
            "verify",
            "--adapter",
            "adapter.safetensors",
            "--base",
            "base.safetensors",
            "--probes",
            "8",
        ],
        &[],
        "verify",
    );

    // no subcommand mutated its inputs
    let after = snapshot(&inputs);
    assert_eq!(before, after, "an input file was mutated");

    println!("[PASS] criterion 9: all 7 subcommands byte-identical across --threads 1/8 and across reruns; inputs untouched");
}

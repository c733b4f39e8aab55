//! Batch front end for checkpoint surgery.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
//! contract violation. Identical invocations on identical files produce
//! byte-identical output files and stdout regardless of `--threads`;
//! progress and timing go to stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ethos_core::{
    align, histogram, merge_lora, project_delta, read_container, spectrum, thin_svd,
    verify_lora_forward, write_container, DtypePolicy, EditRecipe, Error, ErrorCategory,
    LoraAdapter, Normalization, PlantedScenario, Provenance, ScaleMode, TaskVector, DEFAULT_SEED,
};

#[derive(Parser)]
#[command(
    name = "ethos",
    version,
    about = "Task-vector surgery on model checkpoints"
)]
struct Cli {
    /// Cap the worker thread count (default: one per core)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum DtypePolicyArg {
    #[default]
    Preserve,
    ForceFloat32,
}

impl From<DtypePolicyArg> for DtypePolicy {
    fn from(v: DtypePolicyArg) -> Self {
        match v {
            DtypePolicyArg::Preserve => DtypePolicy::Preserve,
            DtypePolicyArg::ForceFloat32 => DtypePolicy::ForceFloat32,
        }
    }
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum ScaleModeArg {
    #[default]
    AlphaOverRank,
    Unit,
}

impl From<ScaleModeArg> for ScaleMode {
    fn from(v: ScaleModeArg) -> Self {
        match v {
            ScaleModeArg::AlphaOverRank => ScaleMode::AlphaOverRank,
            ScaleModeArg::Unit => ScaleMode::Unit,
        }
    }
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum NormalizationArg {
    #[default]
    MaxAbs,
    None,
}

impl From<NormalizationArg> for Normalization {
    fn from(v: NormalizationArg) -> Self {
        match v {
            NormalizationArg::MaxAbs => Normalization::MaxAbs,
            NormalizationArg::None => Normalization::None,
        }
    }
}

fn parse_position(s: &str) -> Result<(usize, usize), String> {
    let (i, j) = s
        .split_once(',')
        .ok_or_else(|| format!("expected 'i,j', got '{s}'"))?;
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| format!("'{t}' is not a non-negative integer"))
    };
    Ok((parse(i)?, parse(j)?))
}

#[derive(Subcommand)]
enum Command {
    /// Extract a task vector: finetuned minus base, name-wise
    Diff {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        finetuned: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        dtype_policy: DtypePolicyArg,
    },
    /// Fold LoRA factor pairs into a dense task vector
    MergeLora {
        #[arg(long)]
        adapter: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        scale_mode: ScaleModeArg,
        #[arg(long, value_enum, default_value_t)]
        dtype_policy: DtypePolicyArg,
    },
    /// Add a scaled task vector to a checkpoint
    Apply {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        vector: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        scale: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        dtype_policy: DtypePolicyArg,
    },
    /// Run an edit recipe end to end
    Edit {
        #[arg(long)]
        recipe: PathBuf,
        /// Where to write the per-layer report as JSON
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Project a task delta onto one layer's singular basis; stats to
    /// stdout, histogram to CSV
    Inspect {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        aux: Option<PathBuf>,
        #[arg(long)]
        task: PathBuf,
        /// Glob selecting exactly one 2-D tensor
        #[arg(long)]
        layer: String,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        normalization: NormalizationArg,
    },
    /// Build a planted-subspace scenario and score the spectral separation
    Bench {
        #[arg(long, default_value_t = 16)]
        d: usize,
        #[arg(long, default_value_t = 16)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        amp_general: f64,
        #[arg(long, default_value_t = 1.0)]
        amp_undesired: f64,
        #[arg(long, default_value_t = 1e-4)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0.03)]
        xi_fraction: f64,
        /// Undesired coefficient position `i,j` (repeatable; default 0,0)
        #[arg(long = "undesired", value_parser = parse_position)]
        undesired: Vec<(usize, usize)>,
        /// General coefficient position `i,j` (repeatable)
        #[arg(long = "general", value_parser = parse_position)]
        general: Vec<(usize, usize)>,
        /// Write the record here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a merged adapter against the two-step forward pass
    Verify {
        #[arg(long)]
        adapter: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long, default_value_t = 8)]
        probes: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: could not configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e.category() {
                ErrorCategory::Usage => 1,
                ErrorCategory::Data => 2,
                ErrorCategory::Numerical => 3,
            };
            ExitCode::from(code)
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Diff {
            base,
            finetuned,
            out,
            dtype_policy,
        } => {
            let base_map = read_container(&base)?;
            let ft_map = read_container(&finetuned)?;
            let vector = ethos_core::diff(&ft_map, &base_map)?.with_provenance(Provenance {
                base_id: base.display().to_string(),
                finetuned_id: finetuned.display().to_string(),
                created_by: "diff".into(),
            });
            write_container(&vector.into_container(), &out, dtype_policy.into())?;
            eprintln!("wrote task vector to {}", out.display());
            Ok(())
        }

        Command::MergeLora {
            adapter,
            out,
            scale_mode,
            dtype_policy,
        } => {
            let map = read_container(&adapter)?;
            let parsed = LoraAdapter::from_tensor_map(&map)?;
            let merged = merge_lora(&parsed, scale_mode.into())?;
            write_container(&merged.into_container(), &out, dtype_policy.into())?;
            eprintln!(
                "merged {} adapter pair(s) at rank {} into {}",
                parsed.pairs().len(),
                parsed.rank(),
                out.display()
            );
            Ok(())
        }

        Command::Apply {
            base,
            vector,
            scale,
            out,
            dtype_policy,
        } => {
            let base_map = read_container(&base)?;
            let vec = TaskVector::from_container(read_container(&vector)?);
            let result = ethos_core::apply(&base_map, &vec, scale)?;
            write_container(&result, &out, dtype_policy.into())?;
            eprintln!("wrote edited checkpoint to {}", out.display());
            Ok(())
        }

        Command::Edit { recipe, report } => {
            let recipe = EditRecipe::from_json_file(&recipe)?;
            let (output, edit_report) = ethos_core::run_edit(&recipe)?;
            write_container(&output, &recipe.output_path, recipe.dtype_policy)?;
            for warning in &edit_report.warnings {
                eprintln!("warning: {warning}");
            }
            if let Some(path) = report {
                std::fs::write(&path, edit_report.to_json())
                    .map_err(|e| Error::Io { path, source: e })?;
            }
            eprintln!(
                "{} edit (lambda {}) on {} layer(s) in {:?}; output {}",
                edit_report.mode,
                edit_report.lambda,
                edit_report.layers.len(),
                edit_report.elapsed,
                recipe.output_path.display()
            );
            Ok(())
        }

        Command::Inspect {
            base,
            aux,
            task,
            layer,
            bins,
            out,
            normalization,
        } => {
            let base_map = read_container(&base)?;
            let aux_vec = match aux {
                Some(p) => Some(TaskVector::from_container(read_container(p)?)),
                None => None,
            };
            let task_vec = TaskVector::from_container(read_container(&task)?);
            let aligned = align(&base_map, aux_vec.as_ref())?;

            let matches: Vec<&String> = aligned
                .iter()
                .filter(|(name, t)| {
                    t.is_matrix()
                        && task_vec.delta().contains(name)
                        && ethos_core::pattern::glob_match(&layer, name)
                })
                .map(|(name, _)| name)
                .collect();
            let name = match matches.len() {
                0 => {
                    return Err(Error::UnknownTensor {
                        tensor: layer.clone(),
                        context: "no delta-covered 2-D tensor matches the layer glob".into(),
                    })
                }
                1 => matches[0].clone(),
                n => {
                    return Err(Error::InvalidArgument {
                        reason: format!(
                            "layer glob '{layer}' matches {n} tensors ({}); refine it",
                            matches
                                .iter()
                                .map(|s| s.as_str())
                                .collect::<Vec<_>>()
                                .join(", ")
                        ),
                    })
                }
            };

            let basis = thin_svd(aligned.get(&name).expect("matched"), &name)?;
            let spec = project_delta(&basis, task_vec.delta().get(&name).expect("matched"))?;
            let stats = spectrum::stats(&spec);
            let hist = histogram(&spec, bins, normalization.into())?;
            hist.write_csv(&out)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&stats).expect("stats serialize")
            );
            eprintln!(
                "wrote {}-bin histogram for '{name}' to {}",
                bins,
                out.display()
            );
            Ok(())
        }

        Command::Bench {
            d,
            k,
            seed,
            amp_general,
            amp_undesired,
            noise_sigma,
            xi_fraction,
            undesired,
            general,
            out,
        } => {
            let undesired = if undesired.is_empty() {
                vec![(0, 0)]
            } else {
                undesired
            };
            let scenario = PlantedScenario {
                d,
                k,
                seed,
                general_indices: general,
                undesired_indices: undesired,
                amp_general,
                amp_undesired,
                noise_sigma,
            };
            let record = ethos_core::evaluate_separation(&scenario, xi_fraction)?;
            if !record.margin_satisfied {
                eprintln!(
                    "warning: separability margin not met (amp_undesired·xi <= amp_general + 5·noise)"
                );
            }
            match out {
                Some(path) => std::fs::write(&path, record.to_json())
                    .map_err(|e| Error::Io { path, source: e })?,
                None => println!("{}", record.to_json()),
            }
            Ok(())
        }

        Command::Verify {
            adapter,
            base,
            probes,
            seed,
        } => {
            let adapter_map = read_container(&adapter)?;
            let parsed = LoraAdapter::from_tensor_map(&adapter_map)?;
            let base_map = read_container(&base)?;
            let report = verify_lora_forward(&parsed, &base_map, probes, seed)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serialize")
            );
            if report.passed() {
                Ok(())
            } else {
                Err(Error::Numerical {
                    reason: format!(
                        "forward-pass deviation {} exceeds tolerance {}",
                        report.max_deviation(),
                        report.tolerance
                    ),
                })
            }
        }
    }
}

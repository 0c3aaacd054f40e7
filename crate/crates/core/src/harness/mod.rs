//! Command implementations behind the `eqpac` binary.
//!
//! Every command takes a resolved [`RunConfig`], writes its CSVs atomically
//! into the output directory next to a `resolved.cfg`, and returns an
//! [`Outcome`] carrying the process exit code.

pub mod axioms;
pub mod demo;
pub mod experiments;
pub mod sweep;

use std::path::{Path, PathBuf};

use crate::config::{KernelKind, RunConfig};
use crate::data::{builtin_scenario, Dataset, GenerativeSpec};
use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};
use crate::kernel::{estimate_kernel, GroupKernel};

pub const EXIT_OK: i32 = 0;
/// A property or acceptance check failed.
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub message: String,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    fn ok(message: String, files: Vec<PathBuf>) -> Self {
        Self { code: EXIT_OK, message, files }
    }
}

/// Exit code for an error that aborted a command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Schema { .. } => EXIT_IO,
        Error::Config { .. }
        | Error::InvalidArgument(_)
        | Error::UnknownScenario(_)
        | Error::UnsupportedLoss(_)
        | Error::NonIdempotent { .. }
        | Error::InvalidKernel(_)
        | Error::InvalidAction(_)
        | Error::InvalidGroup(_)
        | Error::NotEnumerable(_)
        | Error::EmptySample
        | Error::ClosureNotCertified(_)
        | Error::DimensionMismatch { .. } => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// The uniform kernel mixing moves mass toward; finite groups only.
pub fn uniform_target(spec: &GenerativeSpec) -> Result<GroupKernel> {
    GroupKernel::uniform(spec.action().group())
}

/// The configured scenario with its data kernel mixed toward uniform.
pub fn scenario(cfg: &RunConfig) -> Result<GenerativeSpec> {
    let spec = builtin_scenario(&cfg.scenario, cfg.scenario_options())?;
    if cfg.kernel_mixing == 0.0 {
        return Ok(spec);
    }
    let mixed = spec.kernel().mix(&uniform_target(&spec)?, cfg.kernel_mixing)?;
    spec.with_kernel(mixed)
}

/// The kernel the averaging projection uses.
pub fn projection_kernel(cfg: &RunConfig, spec: &GenerativeSpec, train: &Dataset) -> Result<GroupKernel> {
    match cfg.kernel_kind {
        KernelKind::Scenario => Ok(spec.kernel().clone()),
        KernelKind::Uniform => uniform_target(spec),
        KernelKind::Table => {
            let path = cfg.kernel_path.as_deref().ok_or_else(|| Error::Config { line: 0, msg: "kernel.path is unset".into() })?;
            GroupKernel::from_csv(&read_to_string(path)?, path, cfg.kernel_buckets)
        }
        KernelKind::Estimated => {
            let inputs: Vec<Vec<f64>> = train.rows.iter().map(|(x, _)| x.clone()).collect();
            estimate_kernel(&inputs, spec.resolver(), cfg.bucketing())
        }
    }
}

pub const SPLIT_FILES: [&str; 4] = ["train.csv", "val.csv", "prior.csv", "representative.csv"];

/// Reads the four split files written by `gen-data`.
pub fn load_splits(dir: &Path, spec: &GenerativeSpec) -> Result<crate::bounds::pipeline::Splits> {
    let mut loaded = Vec::with_capacity(4);
    for name in SPLIT_FILES {
        let path = dir.join(name);
        let data = Dataset::from_csv(&read_to_string(&path)?, &path)?;
        if data.dim != spec.input_dim() {
            return Err(Error::Schema {
                path,
                line: 1,
                msg: format!("dimension {} does not match scenario {} ({})", data.dim, spec.name, spec.input_dim()),
            });
        }
        loaded.push(data);
    }
    let representative = loaded.pop().expect("four splits");
    let prior = loaded.pop().expect("four splits");
    let val = loaded.pop().expect("four splits");
    let train = loaded.pop().expect("four splits");
    representative.check_canonical(spec.resolver()).map_err(|e| match e {
        Error::NotCanonical { index } => Error::Schema {
            path: dir.join(SPLIT_FILES[3]),
            line: index + 2,
            msg: "row is not a canonical representative".into(),
        },
        other => other,
    })?;
    Ok(crate::bounds::pipeline::Splits { train, val, prior, representative })
}

/// Writes `resolved.cfg` and then each `(file name, contents)` pair.
pub fn emit(cfg: &RunConfig, outputs: &[(&str, String)]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::with_capacity(outputs.len() + 1);
    let resolved = cfg.out_dir.join("resolved.cfg");
    write_atomic(&resolved, &cfg.render())?;
    files.push(resolved);
    for (name, contents) in outputs {
        let path = cfg.out_dir.join(name);
        write_atomic(&path, contents)?;
        files.push(path);
    }
    Ok(files)
}

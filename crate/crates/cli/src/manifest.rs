//! Run manifests and their replay.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{run_experiment, Experiment, Format, InvalidInput};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `<out>.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl FileRecord {
    pub fn of(path: &Path, contents: &[u8]) -> Self {
        Self {
            path: path.to_path_buf(),
            sha256: sha256_hex(contents),
            bytes: contents.len() as u64,
        }
    }
}

/// Wall-clock information; kept out of every payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_ms: u128,
    pub elapsed_ms: f64,
}

impl Timing {
    pub fn new(started: std::time::SystemTime, elapsed: std::time::Duration) -> Self {
        Self {
            started_unix_ms: started
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            elapsed_ms: elapsed.as_secs_f64() * 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    /// Command line as typed, for reference only.
    pub argv: Vec<String>,
    /// Parsed parameters with input paths made absolute; replay runs these.
    pub experiment: Experiment,
    pub seed: u64,
    pub format: Format,
    pub threads: usize,
    pub out: PathBuf,
    pub outputs: Vec<FileRecord>,
    pub inputs: Vec<FileRecord>,
    pub timing: Timing,
    pub warnings: Vec<String>,
}

impl Manifest {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        argv: Vec<String>,
        experiment: Experiment,
        seed: u64,
        format: Format,
        threads: usize,
        out: &Path,
        outputs: Vec<FileRecord>,
        inputs: Vec<FileRecord>,
        timing: Timing,
        warnings: Vec<String>,
    ) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            argv,
            experiment,
            seed,
            format,
            threads,
            out: out.to_path_buf(),
            outputs,
            inputs,
            timing,
            warnings,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")
            .with_context(|| format!("cannot write manifest {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read manifest {}", path.display()))?;
        let probe: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("manifest {} is not JSON", path.display()))?;
        let version = probe.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(MANIFEST_SCHEMA_VERSION as u64) {
            return Err(InvalidInput(format!(
                "manifest schema version {version:?} is not supported (expected {MANIFEST_SCHEMA_VERSION})"
            ))
            .into());
        }
        serde_json::from_value(probe)
            .with_context(|| format!("manifest {} is malformed", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputComparison {
    pub original: PathBuf,
    pub replayed: PathBuf,
    pub expected: String,
    pub actual: String,
    pub identical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub manifest: PathBuf,
    pub replay_manifest: PathBuf,
    pub threads: usize,
    pub outputs: Vec<OutputComparison>,
    /// Input files whose checksum changed since the original run.
    pub changed_inputs: Vec<PathBuf>,
    pub identical: bool,
}

/// Re-run the experiment recorded in `manifest_file` into `out_dir` and
/// compare every output checksum with the recorded one.
pub fn replay(
    manifest_file: &Path,
    out_dir: Option<&Path>,
    threads: Option<usize>,
) -> Result<ReplayOutcome> {
    let manifest = Manifest::read(manifest_file)?;
    let current = env!("CARGO_PKG_VERSION");
    if manifest.tool_version != current {
        bail!(InvalidInput(format!(
            "manifest was written by version {} but this is {current}",
            manifest.tool_version
        )));
    }
    let mut changed_inputs = Vec::new();
    for input in &manifest.inputs {
        let bytes = std::fs::read(&input.path).map_err(|e| {
            InvalidInput(format!(
                "cannot resolve input {}: {e}",
                input.path.display()
            ))
        })?;
        if sha256_hex(&bytes) != input.sha256 {
            changed_inputs.push(input.path.clone());
        }
    }
    let dir = match out_dir {
        Some(d) => d.to_path_buf(),
        None => manifest_file
            .parent()
            .unwrap_or(Path::new("."))
            .join("replay"),
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let name = manifest
        .out
        .file_name()
        .context("manifest output path has no file name")?;
    let new_out = dir.join(name);
    let threads = threads.unwrap_or(manifest.threads);
    let mut argv = vec![
        "fbmlab".to_string(),
        "replay".to_string(),
        manifest_file.display().to_string(),
    ];
    argv.extend(["--threads".to_string(), threads.to_string()]);
    let run = run_experiment(
        &manifest.experiment,
        manifest.seed,
        Some(manifest.format),
        Some(&new_out),
        threads,
        &argv,
    )?;
    if run.manifest.outputs.len() != manifest.outputs.len() {
        bail!(
            "replay produced {} outputs but the manifest lists {}",
            run.manifest.outputs.len(),
            manifest.outputs.len()
        );
    }
    let outputs: Vec<OutputComparison> = manifest
        .outputs
        .iter()
        .zip(&run.manifest.outputs)
        .map(|(a, b)| OutputComparison {
            original: a.path.clone(),
            replayed: b.path.clone(),
            expected: a.sha256.clone(),
            actual: b.sha256.clone(),
            identical: a.sha256 == b.sha256,
        })
        .collect();
    for o in outputs.iter().filter(|o| !o.identical) {
        log::error!(
            "checksum mismatch for {}: expected {}, got {}",
            o.original.display(),
            o.expected,
            o.actual
        );
    }
    Ok(ReplayOutcome {
        manifest: manifest_file.to_path_buf(),
        replay_manifest: run.manifest_path,
        threads,
        identical: outputs.iter().all(|o| o.identical),
        outputs,
        changed_inputs,
    })
}

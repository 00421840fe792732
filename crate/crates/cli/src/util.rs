//! Shared plumbing: the exit-code contract, atomic file writes, JSON config
//! loading with positioned diagnostics, and the append-only metrics log.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use deskrl_core::curation::CurationError;
use deskrl_core::curriculum::PipelineError;
use deskrl_core::environment::{generate_tasks, EnvError, GeneratorSpec, Task};
use deskrl_core::evalkit::EvalError;
use deskrl_core::policy::PolicyError;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Process exit contract: 0 success, 1 input error, 2 unsatisfiable or
/// degenerate, 3 divergence.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Unsatisfiable(String),
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Unsatisfiable(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (CliError::Input(m) | CliError::Unsatisfiable(m) | CliError::Diverged(m)) = self;
        f.write_str(m)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<CurationError> for CliError {
    fn from(e: CurationError) -> Self {
        match e {
            CurationError::Unsatisfiable(_) => CliError::Unsatisfiable(e.to_string()),
            CurationError::BadSpec(_) => CliError::Input(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Degenerate(_) => CliError::Unsatisfiable(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Diverged { stage_id, step, .. } => CliError::Diverged(format!(
                "stage {stage_id} diverged at step {step}"
            )),
            other => CliError::Input(other.to_string()),
        }
    }
}

/// Uses `--out` when given, otherwise the DESKRL_OUT environment variable.
pub fn resolve_out(out: Option<PathBuf>) -> Result<PathBuf, CliError> {
    out.or_else(|| std::env::var_os("DESKRL_OUT").map(PathBuf::from)).ok_or_else(|| {
        CliError::Input("no output directory: pass --out or set DESKRL_OUT".into())
    })
}

/// Writes via a temp file in the same directory plus a rename, so readers
/// never observe a partial file.
pub fn atomic_write(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Input(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!("{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Parses a JSON file, prefixing errors with `path:line:column`.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Input(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    body.push('\n');
    atomic_write(path, &body)
}

/// Generates the task suite a recipe file describes.
pub fn load_tasks(spec_path: &Path) -> Result<Vec<Task>, CliError> {
    let spec: GeneratorSpec = read_json(spec_path)?;
    Ok(generate_tasks(&spec)?)
}

/// One line of the JSON-lines metrics log.
#[derive(Serialize)]
struct MetricsRecord<'a, T: Serialize> {
    timestamp: u64,
    command: &'a str,
    step: u64,
    payload: &'a T,
}

/// Unix seconds, overridable through SOURCE_DATE_EPOCH so runs can be made
/// byte-reproducible.
fn unix_timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return t;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Appends one record per (step, payload) pair. The log is append-only, so
/// unlike the artifact files it is written with O_APPEND rather than
/// temp-and-rename; each chunk goes out in a single write call.
pub fn append_metrics<T: Serialize>(
    path: &Path,
    command: &str,
    records: impl IntoIterator<Item = (u64, T)>,
) -> Result<(), CliError> {
    let mut chunk = String::new();
    for (step, payload) in records {
        let record = MetricsRecord { timestamp: unix_timestamp(), command, step, payload: &payload };
        let line = serde_json::to_string(&record)
            .map_err(|e| CliError::Input(format!("metrics record: {e}")))?;
        chunk.push_str(&line);
        chunk.push('\n');
    }
    if chunk.is_empty() {
        return Ok(());
    }
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(chunk.as_bytes())?;
    Ok(())
}

/// Rejects config files whose schema version this build does not understand.
pub fn require_version(path: &Path, found: u32, expected: u32) -> Result<(), CliError> {
    if found == expected {
        Ok(())
    } else {
        Err(CliError::Input(format!(
            "{}: unsupported config version {found} (this build understands {expected})",
            path.display()
        )))
    }
}

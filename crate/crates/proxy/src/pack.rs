//! Unpacking `/init` payloads into an on-disk pack.

use std::io;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use base64::Engine;
use raptor_core::{ActionManifest, ManifestError, TaskDag};
use serde::Deserialize;
use serde_json::Value;

use crate::executor::is_contained;

/// Entry name used for packs initialized without a manifest.
pub const LEGACY_ENTRY: &str = "main";

#[derive(Debug, thiserror::Error)]
pub enum InitError {
    #[error("invalid archive: {0}")]
    InvalidArchive(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("manifest entry `{name}` points at missing file {location}")]
    MissingEntry { name: String, location: String },
    #[error("a multi-function manifest needs an archive, not inline code")]
    InlineWithManifest,
    #[error("unknown runtime `{0}`")]
    UnknownRuntime(String),
    #[error("failed to write pack: {0}")]
    Io(#[from] io::Error),
}

/// The `value` of an `/init` request.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct InitPayload {
    /// Inline source, or a base64 tar.gz archive when `binary` is set.
    pub code: String,
    #[serde(default)]
    pub binary: bool,
    /// Entrypoint of a legacy archive. Defaults to `exec`.
    #[serde(default)]
    pub main: Option<String>,
    /// Manifest document, as an object or a JSON string.
    #[serde(default)]
    pub manifest: Option<Value>,
    /// `sh`, `python`, `node`, or absent to exec entrypoints directly.
    #[serde(default)]
    pub runtime: Option<String>,
}

#[derive(Debug)]
pub struct Pack {
    pub manifest: ActionManifest,
    pub dag: TaskDag,
    pub root: PathBuf,
    pub interpreter: Option<String>,
    /// Single function initialized without a manifest; its output is
    /// returned unwrapped.
    pub legacy: bool,
}

impl Pack {
    pub fn entrypoint(&self, task: &str) -> Option<PathBuf> {
        self.manifest.entry(task).map(|e| self.root.join(&e.location))
    }
}

fn interpreter(runtime: Option<&str>) -> Result<Option<String>, InitError> {
    Ok(match runtime {
        None | Some("binary" | "native" | "exec") => None,
        Some("sh" | "shell" | "bash") => Some("sh".into()),
        Some(r) if r.starts_with("python") => Some("python3".into()),
        Some(r) if r.starts_with("node") => Some("node".into()),
        Some(other) => return Err(InitError::UnknownRuntime(other.to_string())),
    })
}

fn parse_manifest(doc: &Value) -> Result<ActionManifest, InitError> {
    let bytes = match doc {
        Value::String(s) => s.as_bytes().to_vec(),
        other => serde_json::to_vec(other).expect("json values serialize"),
    };
    Ok(ActionManifest::parse(&bytes)?)
}

/// Extracts a gzipped tar archive under `root`. Only regular files and
/// directories with contained relative paths are accepted.
pub fn unpack_archive(bytes: &[u8], root: &Path) -> Result<usize, InitError> {
    let mut archive = tar::Archive::new(flate2::read::GzDecoder::new(bytes));
    let mut files = 0;
    let entries = archive.entries().map_err(|e| InitError::InvalidArchive(e.to_string()))?;
    for entry in entries {
        let mut entry = entry.map_err(|e| InitError::InvalidArchive(e.to_string()))?;
        let path = entry.path().map_err(|e| InitError::InvalidArchive(e.to_string()))?.into_owned();
        if !is_contained(&path) {
            return Err(InitError::InvalidArchive(format!("entry {} escapes the pack root", path.display())));
        }
        let kind = entry.header().entry_type();
        if !(kind.is_file() || kind.is_dir()) {
            return Err(InitError::InvalidArchive(format!("entry {} is not a file or directory", path.display())));
        }
        let dest = root.join(&path);
        if let Some(parent) = dest.parent() {
            std::fs::create_dir_all(parent)?;
        }
        entry.unpack(&dest).map_err(|e| InitError::InvalidArchive(e.to_string()))?;
        files += usize::from(kind.is_file());
    }
    Ok(files)
}

/// Materializes an init payload under `root`, which must not exist yet.
pub fn install(payload: &InitPayload, root: &Path) -> Result<Pack, InitError> {
    let interpreter = interpreter(payload.runtime.as_deref())?;
    std::fs::create_dir_all(root)?;

    let (manifest, legacy) = if payload.binary {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(payload.code.trim())
            .map_err(|e| InitError::InvalidArchive(format!("bad base64: {e}")))?;
        unpack_archive(&bytes, root)?;
        match &payload.manifest {
            Some(doc) => (parse_manifest(doc)?, false),
            None => (ActionManifest::single(LEGACY_ENTRY, payload.main.as_deref().unwrap_or("exec"))?, true),
        }
    } else {
        if payload.manifest.as_ref().is_some_and(|m| parse_manifest(m).map(|m| m.len() > 1).unwrap_or(true)) {
            return Err(InitError::InlineWithManifest);
        }
        let file = root.join(LEGACY_ENTRY);
        std::fs::write(&file, &payload.code)?;
        std::fs::set_permissions(&file, std::fs::Permissions::from_mode(0o755))?;
        (ActionManifest::single(LEGACY_ENTRY, LEGACY_ENTRY)?, true)
    };

    for entry in manifest.entries() {
        if !root.join(&entry.location).is_file() {
            return Err(InitError::MissingEntry { name: entry.name.clone(), location: entry.location.clone() });
        }
    }
    let dag = manifest.build_dag();
    Ok(Pack { manifest, dag, root: root.to_path_buf(), interpreter, legacy })
}

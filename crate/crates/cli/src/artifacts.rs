//! Artifact files: provenance stamping and atomic writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Carried by every artifact so results can be traced to their inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the effective configuration, overrides included.
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl Provenance {
    pub fn of(config: &RunConfig) -> Self {
        let canonical = serde_json::to_vec(config).expect("config serializes");
        Self {
            config_hash: hex::encode(Sha256::digest(&canonical)),
            seed: config.seed,
            version: VERSION.to_string(),
        }
    }

    fn comment(&self) -> String {
        format!("# config_hash={} seed={} version={}\n", self.config_hash, self.seed, self.version)
    }
}

/// A JSON payload stamped with its provenance.
#[derive(Debug, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub body: T,
}

/// Output directory of one run.
#[derive(Debug, Clone)]
pub struct OutDir {
    pub root: PathBuf,
    pub provenance: Provenance,
}

impl OutDir {
    pub fn new(config: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(&config.out_dir)
            .with_context(|| format!("cannot create output directory {}", config.out_dir.display()))?;
        Ok(Self {
            root: config.out_dir.clone(),
            provenance: Provenance::of(config),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `bytes` to a temporary file in the output directory and renames
    /// it into place.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        let mut tmp = NamedTempFile::new_in(&self.root)
            .with_context(|| format!("cannot create a temporary file in {}", self.root.display()))?;
        tmp.write_all(bytes)
            .with_context(|| format!("cannot write {}", path.display()))?;
        tmp.persist(&path)
            .with_context(|| format!("cannot move artifact into {}", path.display()))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, body: &T) -> Result<PathBuf> {
        let stamped = Stamped {
            provenance: self.provenance.clone(),
            body,
        };
        let mut text = serde_json::to_string_pretty(&stamped)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// CSV with a leading `#` comment line carrying the provenance.
    pub fn write_csv(&self, name: &str, csv: &[u8]) -> Result<PathBuf> {
        let mut bytes = self.provenance.comment().into_bytes();
        bytes.extend_from_slice(csv);
        self.write(name, &bytes)
    }

    /// Reads an artifact an earlier command wrote; `hint` names that command.
    pub fn read_json<T: DeserializeOwned>(&self, name: &str, hint: &str) -> Result<Stamped<T>> {
        let path = self.path(name);
        let text = read_required(&path, hint)?;
        serde_json::from_str(&text).with_context(|| format!("{} is not a valid artifact", path.display()))
    }
}

/// A prerequisite artifact is missing.
#[derive(Debug)]
pub struct MissingArtifact {
    pub path: PathBuf,
    pub hint: String,
}

impl std::fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} not found; run `{}` first", self.path.display(), self.hint)
    }
}

impl std::error::Error for MissingArtifact {}

pub fn read_required(path: &Path, hint: &str) -> Result<String> {
    if !path.is_file() {
        return Err(MissingArtifact {
            path: path.to_path_buf(),
            hint: hint.to_string(),
        }
        .into());
    }
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

/// File-name fragment for a risk aversion, e.g. `0.0001`.
pub fn rho_tag(rho: f64) -> String {
    format!("{rho}")
}

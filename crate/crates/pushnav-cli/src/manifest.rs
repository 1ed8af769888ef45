//! Run manifests. Every subcommand writes `manifest.json` next to its other
//! outputs: the artifact version, the subcommand, a hash of the fully
//! resolved configuration, the seed, and the input file names. Re-running
//! the same binary with the same inputs reproduces every output byte for
//! byte, and the manifest is itself deterministic (no timestamps, no
//! absolute paths).

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub artifact: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    /// SHA-256 over the canonical rendering of the resolved configuration.
    pub config_hash: String,
    pub seed: u64,
    /// Input file basenames (never absolute paths, for reproducibility).
    pub inputs: BTreeMap<&'static str, String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &'static str, config: &impl std::fmt::Debug, seed: u64) -> Manifest {
        Manifest {
            artifact: "pushnav",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_hash: hash_config(config),
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(mut self, key: &'static str, path: &Path) -> Manifest {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.inputs.insert(key, name);
        self
    }

    pub fn output(mut self, name: &str) -> Manifest {
        self.outputs.push(name.to_string());
        self
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Internal(format!("manifest encode: {e}")))?;
        crate::write_output(&dir.join("manifest.json"), &(text + "\n"))
    }
}

/// Debug formatting prints every float in shortest round-trip form, so equal
/// configurations hash equally and any numeric drift changes the hash.
pub fn hash_config(config: &impl std::fmt::Debug) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("{config:?}").as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

//! Run manifests: enough provenance to reproduce a command bit-exactly.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::AppError;

pub struct ManifestBuilder {
    command: &'static str,
    config: Value,
    seed: Option<u64>,
    inputs: Vec<(PathBuf, String)>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl ManifestBuilder {
    /// `config` is the fully resolved settings object; its canonical JSON
    /// serialization is hashed so manifests with equal hashes ran equal
    /// configurations.
    pub fn new(command: &'static str, config: Value, seed: Option<u64>) -> Self {
        ManifestBuilder {
            command,
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), AppError> {
        let bytes = std::fs::read(path)
            .map_err(|e| AppError::Input(format!("cannot read {}: {e}", path.display())))?;
        let digest = hex(&Sha256::digest(&bytes));
        self.inputs.push((path.to_path_buf(), digest));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes `<primary output>.manifest.json` (or an explicit path).
    pub fn write(self, explicit: Option<&Path>) -> Result<(), AppError> {
        let primary = self
            .outputs
            .first()
            .cloned()
            .unwrap_or_else(|| PathBuf::from("run"));
        let path = explicit
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(format!("{}.manifest.json", primary.display())));
        let config_hash = hex(&Sha256::digest(self.config.to_string().as_bytes()));
        let doc = json!({
            "command": self.command,
            "config": self.config,
            "config_hash": config_hash,
            "seed": self.seed,
            "inputs": self
                .inputs
                .iter()
                .map(|(p, d)| json!({"path": p.display().to_string(), "sha256": d}))
                .collect::<Vec<_>>(),
            "outputs": self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>(),
            "engine_version": env!("CARGO_PKG_VERSION"),
            "wall_clock_seconds": self.started.elapsed().as_secs_f64(),
        });
        std::fs::write(&path, format!("{:#}\n", doc)).map_err(|e| crate::io_err(&path, e))
    }
}

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Serialize)]
pub struct Versions {
    pub temperley: &'static str,
    pub cli: &'static str,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    /// sha256 over the command and every input file
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
}

/// Collects inputs and outputs of one run.
pub struct Run {
    hasher: Sha256,
    started: Instant,
    pub seed: u64,
    pub outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(line: &[String], seed: u64) -> Self {
        let mut hasher = Sha256::new();
        // output locations and thread count do not change results
        let mut skip = false;
        for a in line.iter().skip(1) {
            if skip {
                skip = false;
                continue;
            }
            if matches!(a.as_str(), "--out" | "--manifest" | "--threads" | "--dump-matrix") {
                skip = true;
                continue;
            }
            if ["--out=", "--manifest=", "--threads=", "--dump-matrix="].iter().any(|p| a.starts_with(p)) {
                continue;
            }
            hasher.update(a.as_bytes());
            hasher.update([0]);
        }
        Run { hasher, started: Instant::now(), seed, outputs: Vec::new() }
    }

    pub fn read_input(&mut self, path: &Path) -> anyhow::Result<String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::usage(format!("cannot read {}: {e}", path.display())))?;
        self.hasher.update(text.as_bytes());
        Ok(text)
    }

    pub fn write_output(&mut self, path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
        std::fs::write(path, bytes).map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    pub fn finish(self, line: &[String], path: &Path) -> anyhow::Result<()> {
        let m = RunManifest {
            command: line.to_vec(),
            config_hash: format!("{:x}", self.hasher.finalize()),
            seed: self.seed,
            versions: Versions { temperley: temperley::VERSION, cli: env!("CARGO_PKG_VERSION") },
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&m)? + "\n")
            .map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))
    }
}

//! Run manifests and artifact writing. A run's identifier embeds a hash of
//! its resolved configuration, so identical configs land in identical
//! paths; data artifacts are never silently overwritten — a re-run must
//! reproduce them byte-for-byte or the command fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::Failure;

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub command: String,
    pub seed: u64,
    pub artifacts: Vec<String>,
    pub wall_clock_secs: f64,
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn run_id(cfg: &RunConfig) -> String {
    format!(
        "{}-{}-{}-s{}-{}",
        cfg.command,
        cfg.task_name,
        cfg.method_name(),
        cfg.seed,
        &config_hash(cfg)[..8]
    )
}

/// Tracks artifacts for one run and writes the manifest at the end.
pub struct RunContext {
    pub cfg: RunConfig,
    pub dir: PathBuf,
    started: Instant,
    artifacts: Vec<String>,
}

impl RunContext {
    pub fn new(cfg: &RunConfig) -> Result<Self, Failure> {
        let dir = cfg.out_dir.join(run_id(cfg));
        std::fs::create_dir_all(&dir)
            .map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            cfg: cfg.clone(),
            dir,
            started: Instant::now(),
            artifacts: Vec::new(),
        })
    }

    /// Writes a deterministic data artifact under the run directory.
    /// An existing identical file passes; differing content is refused.
    pub fn write(&mut self, rel: &str, content: &str) -> Result<PathBuf, Failure> {
        let path = self.dir.join(rel);
        write_checked(&path, content)?;
        self.artifacts.push(rel.to_string());
        Ok(path)
    }

    /// Writes the manifest (exempt from the overwrite check: wall-clock
    /// time is not deterministic).
    pub fn finish(self) -> Result<PathBuf, Failure> {
        let manifest = RunManifest {
            run_id: run_id(&self.cfg),
            config_hash: config_hash(&self.cfg),
            command: self.cfg.command.clone(),
            seed: self.cfg.seed,
            artifacts: self.artifacts,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
        };
        let path = self.dir.join("manifest.json");
        let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, body)?;
        Ok(path)
    }
}

pub fn write_checked(path: &Path, content: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    if path.exists() {
        let existing = std::fs::read_to_string(path)?;
        if existing == content {
            return Ok(());
        }
        return Err(Failure::Invariant(format!(
            "{} exists with different content; refusing to overwrite",
            path.display()
        )));
    }
    std::fs::write(path, content)?;
    Ok(())
}

/// Renders rows as CSV; fields are plain numbers/identifiers, so no
/// quoting is needed.
pub fn csv(header: &str, rows: &[String]) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    out
}

/// Fixed-precision float formatting so outputs are byte-stable.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        format!("{x}")
    }
}

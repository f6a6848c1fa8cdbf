//! `run.json`: what was run, with which config and seed, and which
//! artifacts landed in the run directory.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    /// Stopped on an error; artifacts listed so far may be incomplete.
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub config: Option<RunConfig>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub status: RunStatus,
    pub error: Option<String>,
    /// Paths relative to `out_dir`.
    pub artifacts: Vec<String>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    /// Creates the run directory and records the run as started.
    pub fn start(command: &str, out_dir: &Path, seed: u64, config: Option<RunConfig>) -> Result<Self> {
        std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let m = Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            out_dir: out_dir.to_path_buf(),
            config,
            started_unix: now(),
            finished_unix: None,
            status: RunStatus::Running,
            error: None,
            artifacts: Vec::new(),
        };
        m.write()?;
        Ok(m)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn record(&mut self, name: &str) -> Result<()> {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.into());
        }
        self.write()
    }

    pub fn finish(&mut self, outcome: &Result<()>) -> Result<()> {
        self.finished_unix = Some(now());
        match outcome {
            Ok(()) => self.status = RunStatus::Complete,
            Err(e) => {
                self.status = RunStatus::Partial;
                self.error = Some(format!("{e:#}"));
            }
        }
        self.write()
    }

    fn write(&self) -> Result<()> {
        let path = self.path(RUN_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))
    }
}

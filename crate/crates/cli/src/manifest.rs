//! Run manifest: what was run and a checksum for every file written.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;
use crate::scenarios::{Artifact, Failure};

/// Version of the CSV/JSON output schemas. Bump when a column changes.
pub const ARTIFACT_VERSION: u32 = 1;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

impl FileEntry {
    pub fn of(a: &Artifact) -> Self {
        let digest = Sha256::digest(&a.bytes);
        Self {
            name: a.name.clone(),
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            bytes: a.bytes.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub artifact_version: u32,
    pub tool_version: &'static str,
    pub scenario: String,
    pub seed: u64,
    pub jobs: usize,
    pub wall_time_s: f64,
    pub config: ScenarioConfig,
    pub files: Vec<FileEntry>,
    pub failures: Vec<Failure>,
}

impl Manifest {
    pub fn new(config: &ScenarioConfig, jobs: usize, wall_time_s: f64, artifacts: &[Artifact], failures: &[Failure]) -> Self {
        Self {
            schema_version: crate::config::SCHEMA_VERSION,
            artifact_version: ARTIFACT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            scenario: config.scenario.name().to_string(),
            seed: config.seed,
            jobs,
            wall_time_s,
            config: config.clone(),
            files: artifacts.iter().map(FileEntry::of).collect(),
            failures: failures.to_vec(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data");
        s.push('\n');
        s
    }
}

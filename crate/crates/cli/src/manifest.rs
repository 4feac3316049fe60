use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use ctjoint::experiment::ExperimentConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::task::Task;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

/// Everything needed to repeat a command and check that it did the same thing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub task: Task,
    pub config: ExperimentConfig,
    pub threads: usize,
    /// Values chosen or estimated during the run (weights, norms, seeds).
    pub resolved: BTreeMap<String, serde_json::Value>,
    /// SHA-256 of each assembled operator in its binary cache format.
    pub operators: BTreeMap<String, String>,
    /// Wall-clock seconds per phase; not part of reproducibility checks.
    pub timing: BTreeMap<String, f64>,
    pub converged: bool,
    pub outputs: Vec<OutputEntry>,
}

impl RunManifest {
    pub fn new(task: Task, config: ExperimentConfig) -> Self {
        Self {
            version: MANIFEST_VERSION,
            task,
            config,
            threads: rayon::current_num_threads(),
            resolved: BTreeMap::new(),
            operators: BTreeMap::new(),
            timing: BTreeMap::new(),
            converged: true,
            outputs: Vec::new(),
        }
    }

    pub fn resolve(&mut self, key: impl Into<String>, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("resolved value serializes");
        self.resolved.insert(key.into(), v);
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
        if m.version != MANIFEST_VERSION {
            return Err(CliError::Usage(format!("manifest version {} is not supported", m.version)));
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self).expect("manifest serializes") + "\n")?;
        Ok(path)
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let k = f.read(&mut buf)?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Output directory that hashes every file written through it.
pub struct OutputDir {
    pub root: PathBuf,
    pub entries: Vec<OutputEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), entries: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Runs `write` on the target path and records the resulting file.
    pub fn add<T>(&mut self, name: &str, write: impl FnOnce(&Path) -> ctjoint::Result<T>) -> Result<T, CliError> {
        let p = self.path(name);
        let out = write(&p)?;
        self.record(name)?;
        Ok(out)
    }

    pub fn add_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(self.path(name), bytes)?;
        self.record(name)
    }

    fn record(&mut self, name: &str) -> Result<(), CliError> {
        let sha256 = sha256_file(&self.path(name))?;
        self.entries.retain(|e| e.path != name);
        self.entries.push(OutputEntry { path: name.to_string(), sha256 });
        Ok(())
    }
}

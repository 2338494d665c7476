use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use serde::Serialize;

pub const MANIFEST_SCHEMA: &str = "pbn-rl/run-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

static STARTED: OnceLock<Instant> = OnceLock::new();

/// Marks the process start for the wall-clock field.
pub fn mark_start() {
    STARTED.get_or_init(Instant::now);
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema: &'static str,
    pub version: u32,
    pub command: String,
    pub args: Vec<String>,
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub versions: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<String>,
}

/// Collects artifacts as a command writes them; [`Run::finish`] commits the
/// manifest last.
pub struct Run {
    dir: PathBuf,
    command: String,
    inputs: BTreeMap<String, String>,
    seed: Option<u64>,
    outputs: Vec<String>,
}

impl Run {
    pub fn start(dir: &Path, command: &str, seed: Option<u64>) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            inputs: BTreeMap::new(),
            seed,
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, role: &str, path: &Path) {
        self.inputs.insert(role.to_string(), path.display().to_string());
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> std::io::Result<PathBuf> {
        let path = self.path(name);
        write_atomic(&path, contents.as_ref())?;
        self.record(name);
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).expect("output serializes");
        text.push('\n');
        self.write(name, text)
    }

    /// Registers a file written by other means.
    pub fn record(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
    }

    pub fn finish(self) -> std::io::Result<PathBuf> {
        let mut versions = BTreeMap::new();
        versions.insert("pbn-rl".to_string(), env!("CARGO_PKG_VERSION").to_string());
        let manifest = RunManifest {
            schema: MANIFEST_SCHEMA,
            version: MANIFEST_VERSION,
            command: self.command,
            args: std::env::args().skip(1).collect(),
            inputs: self.inputs,
            seed: self.seed,
            versions,
            wall_clock_seconds: STARTED.get_or_init(Instant::now).elapsed().as_secs_f64(),
            outputs: self.outputs,
        };
        let path = self.dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}

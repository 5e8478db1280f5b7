//! Per-run provenance record.
//!
//! Every command writes `<command>.run.json` into its output directory. It
//! lists the SHA-256 of each input and output file, and it names the
//! manifests (found next to the inputs) whose outputs include an input
//! byte-for-byte. Chasing `parents` therefore walks the lineage of an
//! artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use agf_core::rng::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::config::AppConfig;
use crate::error::{CliError, CliResult};

/// File name of `command`'s manifest.
pub fn manifest_name(command: &str) -> String {
    format!("{command}.run.json")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    /// Contents include wall-clock timings and differ between identical runs.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub volatile: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config: AppConfig,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    /// Manifests of the runs that wrote the inputs.
    pub parents: Vec<FileHash>,
    pub started_unix_ms: u64,
    pub wall_ms: u64,
}

impl RunManifest {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    /// Output hashes, by file name, that must match between identical runs.
    pub fn stable_outputs(&self) -> BTreeMap<String, String> {
        self.outputs
            .iter()
            .filter(|o| !o.volatile)
            .map(|o| {
                let name = Path::new(&o.path).file_name().map_or_else(|| o.path.clone(), |n| n.to_string_lossy().into_owned());
                (name, o.sha256.clone())
            })
            .collect()
    }
}

/// Collects a command's I/O as it happens.
pub struct Recorder {
    manifest: RunManifest,
    out_dir: PathBuf,
    started: Instant,
}

fn display(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

impl Recorder {
    pub fn new(command: &str, config: &AppConfig, out_dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(out_dir).map_err(|e| CliError::Other(format!("cannot create {}: {e}", out_dir.display())))?;
        let started_unix_ms = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
        let mut seeds = BTreeMap::new();
        seeds.insert("run".to_owned(), config.seed);
        Ok(Recorder {
            manifest: RunManifest {
                tool: "agf".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                argv: std::env::args().collect(),
                config: config.clone(),
                seeds,
                inputs: Vec::new(),
                outputs: Vec::new(),
                parents: Vec::new(),
                started_unix_ms,
                wall_ms: 0,
            },
            out_dir: out_dir.to_owned(),
            started: Instant::now(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seeds.insert(name.into(), value);
    }

    /// Reads and records an input file. A missing or unreadable file is a
    /// data error.
    pub fn input(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        let sha = sha256_hex(&bytes);
        self.find_parents(path, &sha);
        self.manifest.inputs.push(FileHash { path: display(path), sha256: sha, bytes: bytes.len() as u64, volatile: false });
        Ok(bytes)
    }

    fn find_parents(&mut self, path: &Path, sha: &str) {
        let dir = match path.parent() {
            Some(d) if d.as_os_str().is_empty() => Path::new("."),
            Some(d) => d,
            None => return,
        };
        let Ok(entries) = std::fs::read_dir(dir) else { return };
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".run.json"))
            .collect();
        found.sort();
        for m in found {
            let Ok(b) = std::fs::read(&m) else { continue };
            let Ok(parent) = serde_json::from_slice::<RunManifest>(&b) else { continue };
            if parent.outputs.iter().any(|o| o.sha256 == sha) && !self.manifest.parents.iter().any(|p| p.path == display(&m)) {
                self.manifest.parents.push(FileHash { path: display(&m), sha256: sha256_hex(&b), bytes: b.len() as u64, volatile: false });
            }
        }
    }

    pub fn input_text(&mut self, path: &Path) -> CliResult<String> {
        String::from_utf8(self.input(path)?).map_err(|_| CliError::data(format!("{} is not UTF-8", path.display())))
    }

    /// Records a file some library call wrote (e.g. a checkpoint sidecar).
    pub fn record(&mut self, path: &Path, volatile: bool) -> CliResult<()> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Other(format!("cannot read back {}: {e}", path.display())))?;
        self.manifest.outputs.retain(|o| o.path != display(path));
        self.manifest.outputs.push(FileHash { path: display(path), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64, volatile });
        Ok(())
    }

    fn put(&mut self, name: &str, bytes: &[u8], volatile: bool) -> CliResult<PathBuf> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Other(format!("cannot write {}: {e}", path.display())))?;
        self.record(&path, volatile)?;
        Ok(path)
    }

    /// Writes `name` into the output directory.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        self.put(name, bytes, false)
    }

    /// Like [`Recorder::write`] for files carrying timings.
    pub fn write_volatile(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        self.put(name, bytes, true)
    }

    pub fn finish(mut self) -> CliResult<RunManifest> {
        self.manifest.wall_ms = self.started.elapsed().as_millis() as u64;
        let path = self.out_dir.join(manifest_name(&self.manifest.command));
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| CliError::Other(format!("cannot write {}: {e}", path.display())))?;
        Ok(self.manifest)
    }
}

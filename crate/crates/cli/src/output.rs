//! Artifact writing and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactRecord {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
    /// False for artifacts that embed wall-clock timings; their hashes
    /// change between otherwise identical runs.
    pub deterministic: bool,
}

pub struct Artifacts {
    dir: PathBuf,
    records: Vec<ArtifactRecord>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            records: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn records(&self) -> &[ArtifactRecord] {
        &self.records
    }

    fn write_bytes(&mut self, name: &str, content: &[u8], deterministic: bool) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, content).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.records.push(ArtifactRecord {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(content)),
            bytes: content.len(),
            deterministic,
        });
        Ok(())
    }

    pub fn text(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        self.write_bytes(name, content.as_bytes(), true)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Internal(format!("serializing {name}: {e}")))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes(), true)
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        self.write_bytes(name, table.render().as_bytes(), table.deterministic)
    }

    /// Writes `manifest.json`, which lists every artifact written so far.
    pub fn finish(self, manifest: Manifest) -> Result<PathBuf, CliError> {
        let manifest = ManifestFile {
            artifacts: self.records,
            ..manifest.into_file()
        };
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Internal(format!("serializing manifest: {e}")))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

/// A CSV table with a header row; floats are written in shortest
/// round-trip form, so no precision is lost.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    deterministic: bool,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
            deterministic: true,
        }
    }

    pub fn with_timings(mut self) -> Self {
        self.deterministic = false;
        self
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn floats(&mut self, values: impl IntoIterator<Item = f64>) {
        self.row(values.into_iter().map(|v| v.to_string()).collect());
    }

    fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub struct Manifest {
    pub subcommand: String,
    pub config_echo: String,
    pub wall_seconds: f64,
}

#[derive(Serialize)]
struct Versions {
    mixgame: &'static str,
    mixgame_cli: &'static str,
}

#[derive(Serialize)]
struct ManifestFile {
    subcommand: String,
    versions: Versions,
    wall_seconds: f64,
    config: String,
    artifacts: Vec<ArtifactRecord>,
}

impl Manifest {
    fn into_file(self) -> ManifestFile {
        ManifestFile {
            subcommand: self.subcommand,
            versions: Versions {
                mixgame: mixgame::VERSION,
                mixgame_cli: env!("CARGO_PKG_VERSION"),
            },
            wall_seconds: self.wall_seconds,
            config: self.config_echo,
            artifacts: Vec::new(),
        }
    }
}

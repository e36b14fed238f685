//! CSV tables and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

/// Shortest round-trip scientific notation; identical bits give identical text.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

/// A CSV table with optional `# ` footer lines.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub footer: Vec<String>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        let mut bytes = w.into_inner().expect("in-memory write");
        for line in &self.footer {
            bytes.extend_from_slice(b"# ");
            bytes.extend_from_slice(line.as_bytes());
            bytes.push(b'\n');
        }
        bytes
    }
}

/// Reads a table written by [`Table::to_bytes`].
pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let format = |e: csv::Error| CliError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(format)?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for r in reader.records() {
        rows.push(r.map_err(format)?.iter().map(str::to_string).collect());
    }
    let footer = text
        .lines()
        .filter_map(|l| l.strip_prefix("# "))
        .map(str::to_string)
        .collect();
    Ok(Table {
        header,
        rows,
        footer,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub status: String,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub version: String,
    pub mode: String,
    pub config: BTreeMap<String, String>,
    pub started_unix: f64,
    pub wall_clock_seconds: f64,
    pub status: String,
    pub stages: Vec<Stage>,
    pub files: Vec<FileRecord>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Format {
            path,
            message: e.to_string(),
        })
    }
}

/// A run directory whose manifest is written at the start and finalized at
/// the end.
pub struct RunDir {
    dir: PathBuf,
    manifest: RunManifest,
    clock: Instant,
}

impl RunDir {
    pub fn create(config: &RunConfig) -> Result<Self, CliError> {
        let dir = config.out.clone();
        fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let manifest = RunManifest {
            artifact: "qsol".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            mode: config.mode.name().into(),
            config: config.echo.clone(),
            started_unix,
            wall_clock_seconds: 0.0,
            status: "running".into(),
            stages: Vec::new(),
            files: Vec::new(),
        };
        let run = Self {
            dir,
            manifest,
            clock: Instant::now(),
        };
        run.save()?;
        Ok(run)
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    fn save(&self) -> Result<(), CliError> {
        let path = self.dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(CliError::io(&path))
    }

    /// Writes a table and records its checksum.
    pub fn write(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        self.write_bytes(name, &table.to_bytes())
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(CliError::io(&path))?;
        self.manifest.files.retain(|f| f.name != name);
        self.manifest.files.push(FileRecord {
            name: name.into(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn stage(
        &mut self,
        name: impl Into<String>,
        started: Instant,
        outcome: Result<(), String>,
    ) {
        let (status, detail) = match outcome {
            Ok(()) => ("ok", None),
            Err(e) => ("failed", Some(e)),
        };
        self.manifest.stages.push(Stage {
            name: name.into(),
            status: status.into(),
            seconds: started.elapsed().as_secs_f64(),
            detail,
        });
    }

    pub fn finish(mut self, status: &str) -> Result<(), CliError> {
        self.manifest.status = status.into();
        self.manifest.wall_clock_seconds = self.clock.elapsed().as_secs_f64();
        self.save()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trip() {
        let mut t = Table::new(&["p", "value"]);
        t.push(vec!["3".into(), num(0.1)]);
        t.push(vec!["4".into(), num(-2.5e-12)]);
        t.footer.push("slope = -1e0".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        fs::write(&path, t.to_bytes()).unwrap();
        let back = read_table(&path).unwrap();
        assert_eq!(back.header, t.header);
        assert_eq!(back.rows, t.rows);
        assert_eq!(back.footer, t.footer);
        assert_eq!(back.rows[1][1].parse::<f64>().unwrap(), -2.5e-12);
    }
}

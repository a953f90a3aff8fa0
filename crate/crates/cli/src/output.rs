//! Serialisation of payloads: JSON envelopes for reports, CSV for tables and paths.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::manifest::FileRecord;

/// Bytes destined for one output file.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub path: PathBuf,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn write(&self) -> Result<FileRecord> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("cannot create {}", dir.display()))?;
        }
        std::fs::write(&self.path, &self.bytes)
            .with_context(|| format!("cannot write {}", self.path.display()))?;
        Ok(FileRecord::of(&self.path, &self.bytes))
    }
}

/// `<out>.meta.json`, the sidecar written next to CSV path files.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Deterministic report file: payload plus the fields needed to read it.
/// Timing and thread counts live only in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEnvelope<T> {
    pub schema_version: u32,
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub warnings: Vec<String>,
    pub payload: T,
}

impl<T: Serialize> ReportEnvelope<T> {
    pub fn new(command: &str, seed: u64, warnings: Vec<String>, payload: T) -> Self {
        Self {
            schema_version: crate::MANIFEST_SCHEMA_VERSION,
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            warnings,
            payload,
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn from_json<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    Ok(serde_json::from_slice(bytes)?)
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// CSV with a header row and string cells.
pub fn to_csv(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().context("flushing CSV buffer")
}

/// Header and rows of a CSV document.
pub fn read_csv(bytes: &[u8]) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok((header, rows))
}

/// Paths in the layout `t,comp_0,...,comp_{d-1},path_id`, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTable {
    pub prefix: String,
    pub times: Vec<f64>,
    /// `(path_id, values[component][node])`.
    pub paths: Vec<(u64, Vec<Vec<f64>>)>,
}

impl PathTable {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let dim = self.paths.first().map_or(0, |p| p.1.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..dim).map(|i| format!("{}_{i}", self.prefix)));
        header.push("path_id".into());
        let mut rows = Vec::with_capacity(self.paths.len() * self.times.len());
        for (id, values) in &self.paths {
            for (k, &t) in self.times.iter().enumerate() {
                let mut row = vec![fmt_f64(t)];
                row.extend(values.iter().map(|c| fmt_f64(c[k])));
                row.push(id.to_string());
                rows.push(row);
            }
        }
        to_csv(&header, &rows)
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let (header, rows) = read_csv(bytes)?;
        anyhow::ensure!(header.len() >= 3 && header[0] == "t", "not a path table");
        let dim = header.len() - 2;
        let prefix = header[1]
            .rsplit_once('_')
            .map(|(p, _)| p.to_string())
            .unwrap_or_default();
        let mut times = Vec::new();
        let mut paths: Vec<(u64, Vec<Vec<f64>>)> = Vec::new();
        for row in rows {
            let id: u64 = row[dim + 1].parse()?;
            if paths.last().map(|p| p.0) != Some(id) {
                paths.push((id, vec![Vec::new(); dim]));
            }
            let t: f64 = row[0].parse()?;
            if paths.len() == 1 {
                times.push(t);
            }
            let entry = &mut paths.last_mut().expect("pushed above").1;
            for (i, comp) in entry.iter_mut().enumerate() {
                comp.push(row[i + 1].parse()?);
            }
        }
        Ok(Self {
            prefix,
            times,
            paths,
        })
    }
}

//! Report files. Every CSV starts with `#` comment lines carrying the
//! producing config and seed; every JSON file carries them as fields.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Renders a float with the shortest exact representation; `None` becomes an empty field.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub struct CsvReport<'a> {
    pub config: &'a serde_json::Value,
    pub seed: Option<u64>,
    pub header: &'a [&'a str],
    pub rows: Vec<Vec<String>>,
}

impl CsvReport<'_> {
    pub fn render(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(format!("# config: {}\n", serde_json::to_string(self.config)?).as_bytes());
        let seed = self.seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into());
        out.extend_from_slice(format!("# seed: {seed}\n").as_bytes());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        Ok(w.into_inner().map_err(|e| e.into_error())?)
    }

    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        write_bytes(path, &self.render()?)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<PathBuf> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

//! Tidy CSV tables with JSON schema sidecars, JSON reports and the checksum manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, Serialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub description: String,
}

/// Long-format table; every cell is already formatted.
#[derive(Clone, Debug)]
pub struct Table {
    pub columns: Vec<Column>,
    rows: Vec<Vec<String>>,
}

impl Table {
    /// `columns` as `(name, type, description)`.
    pub fn new(columns: &[(&str, &str, &str)]) -> Self {
        let columns = columns
            .iter()
            .map(|(n, k, d)| Column { name: n.to_string(), kind: k.to_string(), description: d.to_string() })
            .collect();
        Table { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width does not match the header");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(",");
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// Shortest round-trip formatting, so reruns are byte-identical.
pub fn num(x: f64) -> String {
    format!("{x}")
}

#[derive(Clone, Debug, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug)]
pub struct Artifacts {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl Artifacts {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|source| CliError::Io { path: root.display().to_string(), source })?;
        Ok(Artifacts { root: root.to_path_buf(), entries: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.display().to_string(), source })?;
        }
        std::fs::write(&path, bytes).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
        self.entries.retain(|e| e.path != rel);
        self.entries.push(ManifestEntry { path: rel.to_string(), bytes: bytes.len(), sha256: hex(&Sha256::digest(bytes)) });
        Ok(())
    }

    /// Writes `rel` (a `.csv` path) and its `.schema.json` sidecar.
    pub fn table(&mut self, rel: &str, table: &Table) -> Result<(), CliError> {
        self.write(rel, table.to_csv().as_bytes())?;
        let schema = serde_json::json!({
            "file": rel.rsplit('/').next().unwrap_or(rel),
            "format": "csv, comma separated, header row, one observation per row",
            "rows": table.len(),
            "columns": table.columns,
        });
        let sidecar = format!("{}.schema.json", rel.trim_end_matches(".csv"));
        self.json(&sidecar, &schema)
    }

    pub fn json(&mut self, rel: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    pub fn text(&mut self, rel: &str, text: &str) -> Result<(), CliError> {
        self.write(rel, text.as_bytes())
    }

    /// Writes `manifest.json` and returns the entries it lists.
    pub fn finish(mut self) -> Result<Vec<ManifestEntry>, CliError> {
        self.entries.sort_by(|a, b| a.path.cmp(&b.path));
        let entries = self.entries.clone();
        self.json("manifest.json", &serde_json::json!({ "files": entries }))?;
        Ok(entries)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_input() {
        assert_eq!(hex(&Sha256::digest(b"abc")), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn tables_get_headers_sidecars_and_manifest_entries() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::create(dir.path()).unwrap();
        let mut t = Table::new(&[("i", "integer", "index"), ("v", "float", "value")]);
        t.push(vec!["0".into(), num(0.5)]);
        a.table("sub/t.csv", &t).unwrap();
        let entries = a.finish().unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("sub/t.csv")).unwrap(), "i,v\n0,0.5\n");
        let schema: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("sub/t.schema.json")).unwrap()).unwrap();
        assert_eq!(schema["columns"][1]["name"], "v");
        let paths: Vec<_> = entries.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(paths, ["sub/t.csv", "sub/t.schema.json"]);
        assert!(dir.path().join("manifest.json").exists());
    }
}

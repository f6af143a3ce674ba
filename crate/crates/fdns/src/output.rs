//! Run directories: atomically written outputs plus a JSON manifest.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fdns_core::fields::SpaceTimeField;
use fdns_core::navier_stokes::ValidationReport;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};
use crate::dump::write_field;
use crate::RunError;

/// Formats a float for CSV output: 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// A CSV table held in memory until written.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_text(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// `criterion,value,tolerance,pass`.
pub fn report_csv(report: &ValidationReport) -> Csv {
    let mut csv = Csv::new(&["criterion", "value", "tolerance", "pass"]);
    for c in &report.criteria {
        csv.push(vec![c.name.clone(), num(c.value), num(c.tolerance), c.pass.to_string()]);
    }
    csv
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Output directory of one command invocation, `<root>/<label>-<hash>`.
pub struct RunDir {
    pub path: PathBuf,
    command: String,
    files: Vec<(String, String)>,
    timings: Vec<(String, f64)>,
    clock: Instant,
}

impl RunDir {
    /// Creates (or reuses) the directory for `cfg`. An existing directory
    /// whose manifest records a different configuration is only replaced
    /// with `force`.
    pub fn create(root: &Path, label: &str, cfg: &RunConfig, force: bool) -> Result<Self, RunError> {
        let hash = cfg.hash();
        let path = root.join(format!("{label}-{}", &hash[..16]));
        let manifest = path.join("manifest.json");
        if manifest.exists() && !force {
            let old: Value = serde_json::from_slice(&fs::read(&manifest)?).unwrap_or(Value::Null);
            if old["config_hash"] != Value::String(hash.clone()) {
                return Err(RunError::Usage(format!(
                    "{} holds a run with a different configuration; pass --force to replace it",
                    path.display()
                )));
            }
        }
        fs::create_dir_all(&path)?;
        Ok(Self {
            path,
            command: label.to_string(),
            files: Vec::new(),
            timings: Vec::new(),
            clock: Instant::now(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        write_atomic(&self.path.join(name), bytes)?;
        self.files.retain(|(n, _)| n != name);
        self.files.push((name.to_string(), hex(&Sha256::digest(bytes))));
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, csv: &Csv) -> io::Result<()> {
        self.write(name, csv.to_text().as_bytes())
    }

    pub fn write_field(&mut self, name: &str, field: &SpaceTimeField) -> io::Result<()> {
        let mut buf = Vec::new();
        write_field(field, &mut buf)?;
        self.write(name, &buf)
    }

    /// Records the time since the previous phase ended.
    pub fn phase(&mut self, name: &str) {
        let now = Instant::now();
        self.timings.push((name.to_string(), (now - self.clock).as_secs_f64()));
        self.clock = now;
    }

    /// Writes `manifest.json` last, atomically, and returns the directory.
    pub fn finish(mut self, cfg: &RunConfig, exit_code: i32, threads: usize) -> io::Result<PathBuf> {
        self.files.sort();
        let config: Map<String, Value> = cfg
            .resolved()
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        let files: Map<String, Value> = self
            .files
            .iter()
            .map(|(n, h)| (n.clone(), json!({ "sha256": h })))
            .collect();
        let timings: Map<String, Value> = self.timings.iter().map(|(n, t)| (n.clone(), json!(t))).collect();
        let manifest = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": cfg.seed,
            "config_hash": cfg.hash(),
            "config": config,
            "files": files,
            "timings_seconds": timings,
            "threads": threads,
            "exit_code": exit_code,
        });
        let text = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?;
        write_atomic(&self.path.join("manifest.json"), text.as_bytes())?;
        Ok(self.path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_checksums_match_files() {
        let root = tempfile::tempdir().unwrap();
        let cfg = RunConfig::parse("", &[]).unwrap();
        let mut dir = RunDir::create(root.path(), "solve", &cfg, false).unwrap();
        let mut csv = Csv::new(&["a", "b"]);
        csv.push(vec![num(0.1), num(-2.0)]);
        dir.write_csv("t.csv", &csv).unwrap();
        dir.phase("work");
        let path = dir.finish(&cfg, 0, 1).unwrap();
        let text = fs::read_to_string(path.join("t.csv")).unwrap();
        assert_eq!(text, "a,b\n1.0000000000000001e-1,-2.0000000000000000e0\n");
        let m: Value = serde_json::from_slice(&fs::read(path.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["files"]["t.csv"]["sha256"], hex(&Sha256::digest(text.as_bytes())));
        assert_eq!(m["config"]["kappa"], "0.1");
        assert_eq!(m["seed"], 1);
        assert!(m["timings_seconds"]["work"].is_number());
        assert!(!path.join("manifest.tmp").exists());
    }

    #[test]
    fn differing_config_is_not_overwritten() {
        let root = tempfile::tempdir().unwrap();
        let cfg = RunConfig::parse("", &[]).unwrap();
        let dir = RunDir::create(root.path(), "solve", &cfg, false).unwrap();
        let path = dir.finish(&cfg, 0, 1).unwrap();
        // same directory name, different recorded configuration
        let m = path.join("manifest.json");
        let text = fs::read_to_string(&m).unwrap().replace(&cfg.hash(), "other");
        fs::write(&m, text).unwrap();
        assert!(RunDir::create(root.path(), "solve", &cfg, false).is_err());
        assert!(RunDir::create(root.path(), "solve", &cfg, true).is_ok());
        let other = cfg.with("kappa", "0.2").unwrap();
        let d2 = RunDir::create(root.path(), "solve", &other, false).unwrap();
        assert_ne!(d2.path, path);
    }
}

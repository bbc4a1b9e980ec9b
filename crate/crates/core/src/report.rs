//! Machine-readable run reports.
//!
//! Everything a subcommand prints goes through [`RunReport`], so the JSON
//! file always contains every number shown on stdout.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub name: String,
    pub value: f64,
    /// Threshold the value is compared against, if any.
    pub limit: Option<f64>,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub config: RunConfig,
    pub status: String,
    pub timings: Vec<Timing>,
    /// Scalar results, in insertion order of their first appearance.
    pub values: Vec<Row>,
    pub histories: BTreeMap<String, Vec<f64>>,
    /// Arbitrary structured sections such as θ* brackets or Mach traces.
    pub sections: BTreeMap<String, serde_json::Value>,
    /// SHA-256 of every output file, keyed by file name.
    pub outputs: BTreeMap<String, String>,
}

impl RunReport {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            config: config.clone(),
            status: "ok".into(),
            timings: Vec::new(),
            values: Vec::new(),
            histories: BTreeMap::new(),
            sections: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    /// Run `f` and record its wall time under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timings.push(Timing {
            stage: stage.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn value(&mut self, name: &str, value: f64) {
        self.values.push(Row {
            name: name.to_string(),
            value,
            limit: None,
            pass: None,
        });
    }

    /// Record `value` with an upper limit.
    pub fn check(&mut self, name: &str, value: f64, limit: f64) -> bool {
        let pass = value <= limit;
        self.values.push(Row {
            name: name.to_string(),
            value,
            limit: Some(limit),
            pass: Some(pass),
        });
        pass
    }

    pub fn history(&mut self, name: &str, h: Vec<f64>) {
        self.histories.insert(name.to_string(), h);
    }

    pub fn section<T: Serialize>(&mut self, name: &str, v: &T) {
        let json = serde_json::to_value(v).expect("report sections serialize");
        self.sections.insert(name.to_string(), json);
    }

    pub fn all_pass(&self) -> bool {
        self.values.iter().all(|r| r.pass != Some(false))
    }

    /// Write `bytes` to `dir/name` and record its hash.
    pub fn write_output(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(name);
        fs::write(&path, bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    /// Lines for stdout; each number also sits in the JSON.
    pub fn summary(&self) -> Vec<String> {
        let mut out = vec![format!("{}: {}", self.command, self.status)];
        for r in &self.values {
            let mut line = format!("  {:<32} {:.10e}", r.name, r.value);
            if let (Some(l), Some(p)) = (r.limit, r.pass) {
                line.push_str(&format!("  (limit {:.3e}) {}", l, if p { "pass" } else { "FAIL" }));
            }
            out.push(line);
        }
        for (name, h) in &self.histories {
            out.push(format!("  history {name}: {} entries", h.len()));
            for (i, v) in h.iter().enumerate() {
                out.push(format!("    {:>4} {:.6e}", i + 1, v));
            }
        }
        for (name, hash) in &self.outputs {
            out.push(format!("  wrote {name} sha256={hash}"));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn write(&self, dir: &Path) -> io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}-report.json", self.command));
        fs::write(&path, self.to_json())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn printed_numbers_are_in_json() {
        let mut r = RunReport::new("potential", &RunConfig::default());
        r.value("speed", 0.347296355333861);
        assert!(!r.check("residual", 2.0, 1.0));
        r.history("picard", vec![1.0, 0.5]);
        let json = r.to_json();
        assert!(json.contains("0.347296355333861"));
        assert!(!r.all_pass());
        assert!(r.summary().iter().any(|l| l.contains("FAIL")));
    }
}

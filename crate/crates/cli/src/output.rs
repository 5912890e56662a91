use std::path::{Path, PathBuf};

use prunekit::model::{write_atomic, Provenance};
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::failure::{CliResult, Context, Failure};

/// Effective parameters of one run. Its hash identifies every artifact the
/// run writes.
#[derive(Debug, Clone)]
pub struct RunInfo {
    pub config: Value,
    pub config_hash: String,
}

impl RunInfo {
    pub fn new(command: &str, seed: u64, params: Value) -> Self {
        let mut config = Map::new();
        config.insert("command".into(), Value::from(command));
        config.insert("seed".into(), Value::from(seed));
        config.insert("params".into(), params);
        let config = Value::Object(config);
        // serde_json maps are sorted, so this is canonical.
        let canonical = serde_json::to_string(&config).expect("config serializes");
        RunInfo { config, config_hash: sha256_hex(canonical.as_bytes()) }
    }

    pub fn provenance(&self) -> Provenance {
        Provenance { toolkit_version: prunekit::TOOLKIT_VERSION.to_string(), config_hash: self.config_hash.clone() }
    }

    /// `payload` as a JSON object carrying the version, hash and config echo.
    pub fn stamp(&self, payload: &impl Serialize) -> Value {
        let mut out = Map::new();
        out.insert("toolkit_version".into(), Value::from(prunekit::TOOLKIT_VERSION));
        out.insert("config_hash".into(), Value::from(self.config_hash.clone()));
        out.insert("config".into(), self.config.clone());
        match serde_json::to_value(payload).expect("report serializes") {
            Value::Object(fields) => out.extend(fields),
            other => {
                out.insert("result".into(), other);
            }
        }
        Value::Object(out)
    }

    /// CSV body preceded by a comment line with the version and hash.
    pub fn stamp_csv(&self, body: &str) -> String {
        format!("# {} config_hash={}\n{body}", prunekit::TOOLKIT_VERSION, self.config_hash)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn json_text(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json serializes");
    s.push('\n');
    s
}

pub fn write_file(path: &Path, text: &str) -> CliResult<()> {
    write_atomic(path, text.as_bytes()).context(path.display())
}

/// Where a report goes: stdout or an atomically written file.
pub struct Sink {
    pub output: Option<PathBuf>,
    pub csv: bool,
}

impl Sink {
    pub fn emit(&self, run: &RunInfo, json: &impl Serialize, csv: impl FnOnce() -> String) -> CliResult<()> {
        let text = if self.csv { run.stamp_csv(&csv()) } else { json_text(&run.stamp(json)) };
        match &self.output {
            Some(path) => write_file(path, &text),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("{}: {e}", dir.display())))
}

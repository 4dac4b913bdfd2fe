use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::commands::CliError;

/// Everything needed to repeat a run: the resolved configuration and the
/// seeds it fanned out to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: Value,
    /// SHA-256 of `config` serialised compactly.
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
}

impl Manifest {
    pub fn new(command: &str, config: &impl Serialize) -> Result<Self, CliError> {
        let config = serde_json::to_value(config).map_err(CliError::usage)?;
        let config_hash = sha256_hex(serde_json::to_string(&config).map_err(CliError::usage)?.as_bytes());
        Ok(Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            config_hash,
            seeds: BTreeMap::new(),
        })
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_json(path, self)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Manifest path of a single-file output: `out.json` → `out.json.manifest.json`.
pub fn beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::usage)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// Merge the flags given on the command line over the `--config` file. The
/// file is either an object keyed by field name or a manifest, whose
/// `config` entry is used.
pub fn resolve<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> Result<T, CliError> {
    let flag_value = serde_json::to_value(flags).map_err(CliError::usage)?;
    let Some(path) = config else {
        return serde_json::from_value(flag_value).map_err(CliError::usage);
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut base: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if let Some(inner) = base.get("config").filter(|_| base.get("command").is_some()) {
        base = inner.clone();
    }
    let Value::Object(ref mut map) = base else {
        return Err(CliError::Usage(format!(
            "{}: config must be a JSON object",
            path.display()
        )));
    };
    if let Value::Object(flags) = flag_value {
        for (k, v) in flags {
            if !v.is_null() {
                map.insert(k, v);
            }
        }
    }
    serde_json::from_value(base).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

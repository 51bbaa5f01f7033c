//! Flat key=value config files and their merge with command-line flags.
//!
//! Precedence: built-in default < config file < explicit flag. Unknown keys
//! are rejected so typos fail loudly.

use std::collections::BTreeMap;
use std::path::Path;

const KNOWN_KEYS: &[&str] = &[
    "method",
    "lambda",
    "epochs",
    "batch_size",
    "learning_rate",
    "seed",
    "power_iters",
    "tol",
    "resplit_every",
    "classes",
    "per_class",
    "side",
    "arch",
    "channels",
    "eps",
    "overshoot",
    "max_iters",
    "deepfool_tol",
];

#[derive(Debug)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn empty() -> Self {
        Self {
            values: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!(
                    "config line {} is not key=value: '{raw}'",
                    lineno + 1
                ));
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(format!("unknown config key '{key}' on line {}", lineno + 1));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    /// Explicit flag wins; otherwise the file value; otherwise the default.
    pub fn resolve<T: std::str::FromStr>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T, String> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|_| format!("config key '{key}' has unparseable value '{raw}'")),
            None => Ok(default),
        }
    }
}

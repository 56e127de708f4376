use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use bucketwatch::{Direction, Error, Result, RunAlerts};
use serde::{Deserialize, Serialize};

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub const ALERTS_VERSION: u32 = 1;

/// Output of `detect`, input of `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertsFile {
    pub version: u32,
    #[serde(rename = "B")]
    pub buckets: u32,
    #[serde(rename = "D")]
    pub depth: u32,
    #[serde(rename = "D_by_transaction", default, skip_serializing_if = "BTreeMap::is_empty")]
    pub depth_by_transaction: BTreeMap<String, u32>,
    pub direction: Direction,
    pub runs: Vec<RunAlerts>,
}

impl AlertsFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != ALERTS_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: ALERTS_VERSION,
            });
        }
        Ok(serde_json::from_value(raw)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn alert_count(&self) -> usize {
        self.runs.iter().map(|r| r.alerts.len()).sum()
    }
}

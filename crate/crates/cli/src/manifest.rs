//! Run manifests written beside every output file.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub parameters: serde_json::Value,
    pub seed: u64,
    pub version: String,
    /// Seconds since the Unix epoch. Kept out of the result files so those
    /// stay byte-identical across repeated runs.
    pub timestamp: u64,
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub fn write_sidecar(
    out: &Path,
    command: &str,
    parameters: serde_json::Value,
    seed: u64,
) -> std::io::Result<()> {
    let manifest = RunManifest {
        command: command.to_owned(),
        parameters,
        seed,
        version: env!("CARGO_PKG_VERSION").to_owned(),
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(sidecar_path(out), json)
}

//! Run manifests: every command records its resolved configuration, seed,
//! source revision, and output paths so a run can be reproduced exactly.

use crate::CliResult;
use serde::Serialize;
use std::path::Path;
use std::process::Command;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub git_describe: String,
    pub outputs: Vec<String>,
    pub wall_seconds: f64,
}

pub fn git_describe() -> String {
    let out = Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output();
    match out {
        Ok(o) if o.status.success() => String::from_utf8_lossy(&o.stdout).trim().to_string(),
        _ => "unknown".to_string(),
    }
}

/// Serialize and write atomically (temp file + rename).
pub fn write_manifest(manifest: &RunManifest, path: &Path) -> CliResult<()> {
    let json = serde_json::to_string_pretty(manifest)?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, json)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

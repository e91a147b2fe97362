//! CSV artifacts and their JSON metadata sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::Result;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Writes a CSV with LF line endings and `header` as the first row.
pub fn write_csv<H, R>(path: &Path, header: &[H], rows: &[R]) -> Result<()>
where
    H: AsRef<str>,
    R: AsRef<[String]>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(header.iter().map(AsRef::as_ref))?;
    for row in rows {
        w.write_record(row.as_ref())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sidecar<'a> {
    pub artifact: String,
    pub command: &'a str,
    pub version: &'static str,
    pub seed: u64,
    pub config_hash: String,
    pub config: &'a RunConfig,
}

pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    artifact.with_file_name(name)
}

/// Writes `<artifact>.meta.json` next to `artifact`.
pub fn write_sidecar(artifact: &Path, command: &str, config: &RunConfig) -> Result<PathBuf> {
    let meta = Sidecar {
        artifact: artifact
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        command,
        version: VERSION,
        seed: config.seed,
        config_hash: config.hash(),
        config,
    };
    let path = sidecar_path(artifact);
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

/// [`write_csv`] followed by [`write_sidecar`].
pub fn write_csv_artifact<H, R>(
    path: &Path,
    header: &[H],
    rows: &[R],
    command: &str,
    config: &RunConfig,
) -> Result<()>
where
    H: AsRef<str>,
    R: AsRef<[String]>,
{
    write_csv(path, header, rows)?;
    write_sidecar(path, command, config)?;
    Ok(())
}

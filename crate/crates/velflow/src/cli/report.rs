//! Output-file plumbing shared by the experiment commands.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{Error, Result};

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

/// Create the output directory and write `manifest.toml` echoing the resolved
/// config and the tool version. Written before any work begins, so a crashed
/// run still leaves the manifest behind.
pub fn write_manifest<C: Serialize>(out: &Path, command: &str, config: &C) -> Result<()> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;

    #[derive(Serialize)]
    struct Manifest<'a, C> {
        command: &'a str,
        version: &'a str,
        config: &'a C,
    }
    let manifest =
        Manifest { command, version: env!("CARGO_PKG_VERSION"), config };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| Error::InvalidSpec(format!("manifest serialization: {e}")))?;
    let path = out.join("manifest.toml");
    std::fs::write(&path, text).map_err(io_err(&path))
}

/// Write one CSV file with a fixed header; each row is already formatted.
pub fn write_csv(
    path: &PathBuf,
    header: &str,
    rows: impl IntoIterator<Item = String>,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "{header}").map_err(io_err(path))?;
    for row in rows {
        writeln!(w, "{row}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_toml<T: Serialize>(path: &PathBuf, value: &T) -> Result<()> {
    let text = toml::to_string_pretty(value)
        .map_err(|e| Error::InvalidSpec(format!("toml serialization: {e}")))?;
    std::fs::write(path, text).map_err(io_err(path))
}

/// Shortest-roundtrip float formatting (Rust's default `Display` for f64),
/// used everywhere so re-running a command reproduces files byte-for-byte.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

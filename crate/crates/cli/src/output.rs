//! Stage outputs are staged beside their target and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliError;

fn staging_path(target: &Path) -> Result<PathBuf, CliError> {
    let name = target
        .file_name()
        .ok_or_else(|| CliError::Validation(format!("output path {} has no file name", target.display())))?;
    let staged = format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id());
    Ok(target.with_file_name(staged))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::pipeline("output", format!("{}: {e}", path.display()))
}

fn ensure_parent(target: &Path) -> Result<(), CliError> {
    match target.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| io_err(p, e)),
        _ => Ok(()),
    }
}

fn check_target(target: &Path, force: bool) -> Result<(), CliError> {
    if !target.exists() || force {
        return Ok(());
    }
    let empty_dir = target.is_dir()
        && fs::read_dir(target)
            .map(|mut d| d.next().is_none())
            .unwrap_or(false);
    if empty_dir {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "{} already exists (use --force to replace it)",
            target.display()
        )))
    }
}

fn remove_existing(target: &Path) -> Result<(), CliError> {
    if target.is_dir() {
        fs::remove_dir_all(target).map_err(|e| io_err(target, e))
    } else if target.exists() {
        fs::remove_file(target).map_err(|e| io_err(target, e))
    } else {
        Ok(())
    }
}

/// Writes `bytes` to `target` through a staged file.
pub fn write_file(target: &Path, bytes: &[u8], force: bool) -> Result<(), CliError> {
    check_target(target, force)?;
    ensure_parent(target)?;
    let staged = staging_path(target)?;
    fs::write(&staged, bytes).map_err(|e| io_err(&staged, e))?;
    if target.is_dir() {
        remove_existing(target)?;
    }
    fs::rename(&staged, target).map_err(|e| io_err(target, e))
}

/// Runs `fill` on a fresh staging directory, then moves it to `target`.
/// The staging directory is removed if `fill` fails.
pub fn write_dir<F>(target: &Path, force: bool, fill: F) -> Result<(), CliError>
where
    F: FnOnce(&Path) -> Result<(), CliError>,
{
    check_target(target, force)?;
    ensure_parent(target)?;
    let staged = staging_path(target)?;
    if staged.exists() {
        remove_existing(&staged)?;
    }
    fs::create_dir_all(&staged).map_err(|e| io_err(&staged, e))?;
    if let Err(e) = fill(&staged) {
        let _ = fs::remove_dir_all(&staged);
        return Err(e);
    }
    remove_existing(target)?;
    fs::rename(&staged, target).map_err(|e| io_err(target, e))
}

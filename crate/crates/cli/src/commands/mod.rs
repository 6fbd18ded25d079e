pub mod eval;
pub mod gen;
pub mod report;
pub mod simulate;
pub mod train;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::CliError;

pub(crate) fn out_err(e: std::io::Error) -> CliError {
    CliError::io(Path::new("<stdout>"), e)
}

/// Creates a fresh directory `parent/prefix-<UTC timestamp>`, adding a
/// numeric suffix when that name is taken.
pub(crate) fn fresh_dir(parent: &Path, prefix: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let base = format!("{prefix}-{stamp}");
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let path = parent.join(name);
        match fs::create_dir(&path) {
            Ok(()) => return Ok(path),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(&path, e)),
        }
    }
    unreachable!()
}

/// Creates `path`, which must not exist yet.
pub(crate) fn new_dir(path: &Path) -> Result<PathBuf, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::create_dir(path).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_jsonl<T: serde::Serialize>(path: &Path, records: &[T]) -> Result<(), CliError> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| CliError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().fold(0.0, |a, x| a + x) / xs.len() as f64
    }
}

/// Sample standard deviation; 0 for fewer than two values.
pub(crate) fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss = xs.iter().fold(0.0, |a, x| a + (x - m) * (x - m));
    (ss / (xs.len() - 1) as f64).sqrt()
}

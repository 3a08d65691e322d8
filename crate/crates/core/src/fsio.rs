//! Atomic file output: every writer lands via temp-file + rename so a
//! crashed or concurrent process never leaves a half-written table behind.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

fn persist(tmp: tempfile::NamedTempFile, path: &Path) -> Result<()> {
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Write raw bytes atomically.
pub fn atomic_write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(parent_dir(path))?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    persist(tmp, path)
}

/// Build a CSV atomically: the writer operates on a temp file that is
/// renamed into place only after `build` succeeds and the file is flushed.
pub fn atomic_csv<F>(path: &Path, build: F) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<&mut File>) -> Result<()>,
{
    let mut tmp = tempfile::NamedTempFile::new_in(parent_dir(path))?;
    {
        let mut writer = csv::Writer::from_writer(tmp.as_file_mut());
        build(&mut writer)?;
        writer.flush()?;
    }
    persist(tmp, path)
}

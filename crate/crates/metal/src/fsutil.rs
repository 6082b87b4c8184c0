//! Crash-safe file writes: write to a sibling temp file, then rename over
//! the target so readers never observe a partial file.

use crate::error::Result;
use std::path::Path;

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    tmp.persist(path).map_err(|e| crate::Error::Io(e.error))?;
    Ok(())
}

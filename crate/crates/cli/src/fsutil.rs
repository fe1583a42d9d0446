//! Output-directory helpers. Every file is produced under a hidden
//! temporary name in its final directory and renamed into place.

use std::path::{Path, PathBuf};

use afdet_core::store::write_atomic;

use crate::error::{CliError, Result};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

/// Runs `write` against a temporary sibling of `path` (same extension, so
/// format detection still works) and renames the result over `path`.
pub fn write_via_temp(path: &Path, write: impl FnOnce(&Path) -> afdet_core::Result<()>) -> Result<()> {
    let tmp = temp_sibling(path);
    if let Err(e) = write(&tmp) {
        let _ = std::fs::remove_file(&tmp);
        return Err(e.into());
    }
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}

fn temp_sibling(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let mut name = format!(".{stem}.tmp{}", std::process::id());
    if let Some(ext) = path.extension().and_then(|e| e.to_str()) {
        name.push('.');
        name.push_str(ext);
    }
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn temp_keeps_extension_and_directory() {
        let t = temp_sibling(Path::new("/a/b/heat_c0.png"));
        assert_eq!(t.parent(), Some(Path::new("/a/b")));
        assert_eq!(t.extension().unwrap(), "png");
        assert!(t.file_name().unwrap().to_str().unwrap().starts_with(".heat_c0.tmp"));
    }

    #[test]
    fn failed_write_leaves_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("x.png");
        let r = write_via_temp(&target, |_| Err(afdet_core::Error::InvalidArgument("no".into())));
        assert!(r.is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}

//! Path checks, atomic writes and the small on-disk formats owned by the CLI.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hedkit::alignment::{parse_alignment_json, parse_textgrid};
use hedkit::{HierarchicalEd, Segmentation};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{} is not a readable file", path.display())))
    }
}

pub fn require_dir(path: &Path) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{} is not a directory", path.display())))
    }
}

/// An output file path must not name an existing directory.
pub fn check_output_file(path: &Path) -> Result<(), CliError> {
    if path.is_dir() {
        return Err(CliError::Usage(format!("output {} is a directory", path.display())));
    }
    Ok(())
}

/// An output directory may be replaced only if it is empty or holds a manifest.
pub fn check_output_dir(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        return Err(CliError::Usage(format!("output {} is a file", path.display())));
    }
    if path.is_dir() && !path.join("manifest.json").is_file() {
        let empty = fs::read_dir(path).map_err(|e| CliError::io(path, e))?.next().is_none();
        if !empty {
            return Err(CliError::Usage(format!(
                "refusing to replace non-empty directory {} without a manifest",
                path.display()
            )));
        }
    }
    Ok(())
}

fn parent_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Write through a temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    check_output_file(path)?;
    let dir = parent_of(path);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".hedkit-")
        .tempfile_in(&dir)
        .map_err(|e| CliError::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Build a directory next to `path` and move it into place once `fill`
/// succeeds. A failed `fill` leaves `path` untouched.
pub fn write_dir_atomic(path: &Path, fill: impl FnOnce(&Path) -> Result<(), CliError>) -> Result<(), CliError> {
    check_output_dir(path)?;
    let dir = parent_of(path);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let tmp = tempfile::Builder::new()
        .prefix(".hedkit-")
        .tempdir_in(&dir)
        .map_err(|e| CliError::io(&dir, e))?;
    fill(tmp.path())?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(tmp.path(), fs::Permissions::from_mode(0o755)).map_err(|e| CliError::io(tmp.path(), e))?;
    }
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| CliError::io(path, e))?;
    }
    let staged = tmp.keep();
    fs::rename(&staged, path).map_err(|e| CliError::io(path, e))?;
    Ok(())
}

/// Either `.TextGrid` or native alignment JSON, chosen by extension.
pub fn load_alignment(path: &Path) -> Result<Segmentation, CliError> {
    require_file(path)?;
    let is_textgrid = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("textgrid"));
    let seg = if is_textgrid {
        parse_textgrid(path)?
    } else {
        parse_alignment_json(path)?
    };
    Ok(seg)
}

/// `K AE T | S AA` → `[["K","AE","T"],["S","AA"]]`.
pub fn parse_text(text: &str) -> Result<Vec<Vec<String>>, CliError> {
    let words: Vec<Vec<String>> = text
        .split('|')
        .map(|w| w.split_whitespace().map(str::to_string).collect())
        .collect();
    if words.iter().any(Vec::is_empty) {
        return Err(CliError::Data(format!(
            "text {text:?} has an empty word; separate phones with spaces and words with '|'"
        )));
    }
    Ok(words)
}

const ED_SET_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct EdSetManifest {
    version: u32,
    ids: Vec<String>,
}

/// A directory of extracted EDs: `manifest.json` plus one `<id>.json` per item.
pub fn save_ed_set(dir: &Path, eds: &BTreeMap<String, HierarchicalEd>) -> Result<(), CliError> {
    let manifest = EdSetManifest {
        version: ED_SET_VERSION,
        ids: eds.keys().cloned().collect(),
    };
    for (id, ed) in eds {
        let path = dir.join(format!("{id}.json"));
        fs::write(&path, ed.to_json()).map_err(|e| CliError::io(&path, e))?;
    }
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| CliError::io(&path, e))
}

pub fn load_ed_set(dir: &Path) -> Result<BTreeMap<String, HierarchicalEd>, CliError> {
    require_dir(dir)?;
    let path = dir.join("manifest.json");
    let manifest: EdSetManifest =
        serde_json::from_str(&read_text(&path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if manifest.version != ED_SET_VERSION {
        return Err(CliError::Data(format!("{}: unsupported version {}", path.display(), manifest.version)));
    }
    manifest
        .ids
        .into_iter()
        .map(|id| {
            let ed = HierarchicalEd::load(dir.join(format!("{id}.json")))?;
            Ok((id, ed))
        })
        .collect()
}

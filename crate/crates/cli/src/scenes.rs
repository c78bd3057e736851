use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lfdeblur::lf::{load_light_field, view_file_name};
use lfdeblur::LightField;

/// A directory holding `view_*.png` files.
pub fn is_lf_dir(dir: &Path) -> bool {
    dir.join(view_file_name(0, 0)).is_file()
}

pub fn load(dir: &Path) -> Result<LightField> {
    load_light_field(dir).with_context(|| format!("loading light field {}", dir.display()))
}

/// `(name, dir)` of every scene below `root`, sorted by name. `root` may
/// itself be a light field; inside a scene directory, `sub` is tried before
/// the directory itself.
pub fn discover(root: &Path, sub: &str) -> Result<Vec<(String, PathBuf)>> {
    if is_lf_dir(root) {
        return Ok(vec![(dir_name(root), root.to_path_buf())]);
    }
    let mut out = Vec::new();
    let entries = std::fs::read_dir(root).with_context(|| format!("listing {}", root.display()))?;
    for entry in entries {
        let path = entry?.path();
        if !path.is_dir() {
            continue;
        }
        let name = dir_name(&path);
        if is_lf_dir(&path.join(sub)) {
            out.push((name, path.join(sub)));
        } else if is_lf_dir(&path) {
            out.push((name, path));
        }
    }
    if out.is_empty() {
        bail!("no light fields found under {}", root.display());
    }
    out.sort();
    Ok(out)
}

/// Directory name, skipping a trailing `sharp`/`blurred` component.
fn dir_name(p: &Path) -> String {
    let full = p.canonicalize().unwrap_or_else(|_| p.to_path_buf());
    let mut parts = full.iter().rev().map(|n| n.to_string_lossy().into_owned());
    match parts.next() {
        Some(n) if n == "sharp" || n == "blurred" => parts.next().unwrap_or(n),
        Some(n) => n,
        None => p.display().to_string(),
    }
}

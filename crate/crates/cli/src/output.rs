//! Output locations and all-or-nothing writes.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::ValueEnum;

pub const OUTPUT_ROOT_ENV: &str = "LCT_OUTPUT_ROOT";
const DEFAULT_ROOT: &str = "lct-output";

/// What to do when the output location already exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Existing {
    /// Refuse and exit with a usage error.
    Fail,
    /// Leave existing outputs alone; sweeps resume from completed runs.
    Skip,
    /// Replace existing outputs.
    Overwrite,
}

/// `flag`, else `config`, else `$LCT_OUTPUT_ROOT/<name>`.
pub fn resolve(flag: Option<&Path>, config: Option<&Path>, name: &str) -> PathBuf {
    if let Some(p) = flag.or(config) {
        return p.to_path_buf();
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from(DEFAULT_ROOT), PathBuf::from);
    root.join(name)
}

/// Outcome of checking a destination against the [`Existing`] policy.
#[derive(Debug, PartialEq, Eq)]
pub enum Plan {
    Write,
    Skip,
}

pub fn plan(dest: &Path, policy: Existing) -> anyhow::Result<Plan> {
    if !dest.exists() {
        return Ok(Plan::Write);
    }
    match policy {
        Existing::Fail => bail!(
            "{} already exists; pass --existing skip or --existing overwrite",
            dest.display()
        ),
        Existing::Skip => Ok(Plan::Skip),
        Existing::Overwrite => Ok(Plan::Write),
    }
}

/// A sibling directory that is renamed onto the destination on success and
/// removed otherwise, so a failed command leaves nothing half-written.
pub struct Staging {
    dir: PathBuf,
    dest: PathBuf,
    done: bool,
}

impl Staging {
    pub fn new(dest: &Path) -> anyhow::Result<Self> {
        let name = dest
            .file_name()
            .map_or_else(|| "out".into(), |n| n.to_string_lossy().into_owned());
        let parent = dest
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
        let dir = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("cannot clear {}", dir.display()))?;
        }
        fs::create_dir(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Self {
            dir,
            dest: dest.to_path_buf(),
            done: false,
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn commit(mut self) -> anyhow::Result<PathBuf> {
        if self.dest.exists() {
            remove(&self.dest)?;
        }
        fs::rename(&self.dir, &self.dest)
            .with_context(|| format!("cannot move {} to {}", self.dir.display(), self.dest.display()))?;
        self.done = true;
        Ok(self.dest.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

fn remove(path: &Path) -> anyhow::Result<()> {
    if path.is_dir() {
        fs::remove_dir_all(path)
    } else {
        fs::remove_file(path)
    }
    .with_context(|| format!("cannot remove {}", path.display()))
}

/// Writes `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_atomic(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn staging_commits_or_vanishes() {
        let root = tempfile::tempdir().unwrap();
        let dest = root.path().join("run");
        {
            let s = Staging::new(&dest).unwrap();
            fs::write(s.path("a.txt"), "x").unwrap();
        }
        assert!(!dest.exists());
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 0);
        let s = Staging::new(&dest).unwrap();
        fs::write(s.path("a.txt"), "y").unwrap();
        s.commit().unwrap();
        assert_eq!(fs::read_to_string(dest.join("a.txt")).unwrap(), "y");
    }

    #[test]
    fn policy_decides_on_existing_outputs() {
        let root = tempfile::tempdir().unwrap();
        assert_eq!(plan(&root.path().join("new"), Existing::Fail).unwrap(), Plan::Write);
        assert!(plan(root.path(), Existing::Fail).is_err());
        assert_eq!(plan(root.path(), Existing::Skip).unwrap(), Plan::Skip);
        assert_eq!(plan(root.path(), Existing::Overwrite).unwrap(), Plan::Write);
    }

    #[test]
    fn flag_beats_config() {
        let p = resolve(Some(Path::new("a")), Some(Path::new("b")), "train");
        assert_eq!(p, PathBuf::from("a"));
        assert_eq!(resolve(None, Some(Path::new("b")), "train"), PathBuf::from("b"));
    }
}

//! Timestamped run directories with a resolved-config snapshot and a
//! `MANIFEST` listing every artifact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub const MANIFEST: &str = "MANIFEST";
pub const SNAPSHOT: &str = "config.toml";

pub struct RunDir {
    pub path: PathBuf,
    command: String,
    created: String,
}

impl RunDir {
    /// Creates `<root>/<command>-<YYYYmmdd-HHMMSS>`, adding a numeric
    /// suffix if that name is taken.
    pub fn create(root: &Path, command: &str) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output root {}", root.display()))?;
        let now = chrono::Local::now();
        let stem = format!("{command}-{}", now.format("%Y%m%d-%H%M%S"));
        let mut path = root.join(&stem);
        let mut n = 1;
        loop {
            match fs::create_dir(&path) {
                Ok(()) => break,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    path = root.join(format!("{stem}-{n}"));
                    n += 1;
                }
                Err(e) => return Err(e).with_context(|| format!("creating run directory {}", path.display())),
            }
        }
        Ok(Self {
            path,
            command: command.to_string(),
            created: now.to_rfc3339(),
        })
    }

    pub fn join(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.path.join(rel)
    }

    pub fn write_snapshot(&self, toml_text: &str) -> Result<()> {
        let p = self.join(SNAPSHOT);
        fs::write(&p, toml_text).with_context(|| format!("writing {}", p.display()))
    }

    /// Lists every file under the run directory with its size.
    pub fn finish(&self) -> Result<PathBuf> {
        let mut files = Vec::new();
        collect(&self.path, &self.path, &mut files)?;
        files.sort();
        let p = self.join(MANIFEST);
        let mut out = fs::File::create(&p).with_context(|| format!("writing {}", p.display()))?;
        writeln!(out, "# command: {}", self.command)?;
        writeln!(out, "# created: {}", self.created)?;
        for (rel, size) in files {
            writeln!(out, "{rel}\t{size}")?;
        }
        Ok(p)
    }
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<(String, u64)>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            if rel != MANIFEST {
                out.push((rel, entry.metadata()?.len()));
            }
        }
    }
    Ok(())
}

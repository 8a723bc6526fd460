use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub const OUTPUT_ENV: &str = "ANPG_OUTPUT_DIR";
const DEFAULT_ROOT: &str = "anpg-output";

/// Output root: the environment override, then the spec's `output_dir`
/// (relative to the spec), then `anpg-output` in the working directory.
pub fn output_root(env_value: Option<String>, spec_dir: Option<&Path>, base_dir: &Path) -> PathBuf {
    if let Some(v) = env_value.filter(|v| !v.is_empty()) {
        return PathBuf::from(v);
    }
    match spec_dir {
        Some(p) if p.is_absolute() => p.to_path_buf(),
        Some(p) => base_dir.join(p),
        None => PathBuf::from(DEFAULT_ROOT),
    }
}

/// Creates `root/name`, or `root/name-1`, `root/name-2`, ... if taken.
pub fn fresh_dir(root: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(root).with_context(|| format!("creating output root {}", root.display()))?;
    for i in 0.. {
        let candidate = if i == 0 {
            root.join(name)
        } else {
            root.join(format!("{name}-{i}"))
        };
        match fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", candidate.display())),
        }
    }
    unreachable!("unbounded suffix search")
}

/// Writes `bytes` to a file that must not exist yet.
pub fn write_new(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let mut f = fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .with_context(|| format!("creating {}", path.display()))?;
    f.write_all(bytes).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collisions_get_suffixes() {
        let tmp = tempfile::tempdir().unwrap();
        let a = fresh_dir(tmp.path(), "exp").unwrap();
        let b = fresh_dir(tmp.path(), "exp").unwrap();
        let c = fresh_dir(tmp.path(), "exp").unwrap();
        assert_eq!(a.file_name().unwrap(), "exp");
        assert_eq!(b.file_name().unwrap(), "exp-1");
        assert_eq!(c.file_name().unwrap(), "exp-2");
    }

    #[test]
    fn existing_files_are_not_overwritten() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("x.csv");
        write_new(&p, b"a").unwrap();
        assert!(write_new(&p, b"b").is_err());
        assert_eq!(fs::read(&p).unwrap(), b"a");
    }

    #[test]
    fn environment_wins() {
        let base = Path::new("/specs");
        assert_eq!(output_root(Some("/env".into()), Some(Path::new("out")), base), PathBuf::from("/env"));
        assert_eq!(output_root(None, Some(Path::new("out")), base), PathBuf::from("/specs/out"));
        assert_eq!(output_root(Some(String::new()), None, base), PathBuf::from(DEFAULT_ROOT));
    }
}

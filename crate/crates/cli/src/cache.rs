//! Content-addressed result cache.
//!
//! An entry is a directory named by the SHA-256 of its inputs, holding the
//! artifact files and a manifest of their digests. Entries are built in a
//! temporary directory and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "MANIFEST.json";
/// Bumped whenever an artifact layout changes.
const FORMAT: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    key: String,
    files: BTreeMap<String, String>,
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Key of `stage` computed from the JSON form of its inputs.
pub fn key<T: Serialize>(stage: &str, inputs: &T) -> String {
    let doc = serde_json::json!({ "stage": stage, "format": FORMAT, "inputs": inputs });
    hex_digest(doc.to_string().as_bytes())
}

#[derive(Debug, Clone)]
pub struct Cache {
    pub root: PathBuf,
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn entry_dir(&self, key: &str) -> PathBuf {
        self.root.join(key)
    }

    /// The verified entry for `key`, built by `make` on a miss.
    ///
    /// Returns the entry directory and whether it was a hit.
    pub fn get_or_make<F>(&self, key: &str, make: F) -> Result<(PathBuf, bool), CliError>
    where
        F: FnOnce(&Path) -> Result<(), CliError>,
    {
        let dir = self.entry_dir(key);
        if dir.exists() {
            verify(&dir, key)?;
            return Ok((dir, true));
        }
        fs::create_dir_all(&self.root)?;
        let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_nanos());
        let tmp = self.root.join(format!(".tmp-{key}-{}-{nanos}", std::process::id()));
        fs::create_dir_all(&tmp)?;
        let built = make(&tmp).and_then(|()| write_manifest(&tmp, key));
        if let Err(e) = built {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
        if fs::rename(&tmp, &dir).is_err() {
            // another process finished the same entry first
            let _ = fs::remove_dir_all(&tmp);
            verify(&dir, key)?;
        }
        Ok((dir, false))
    }
}

fn artifact_names(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut names = Vec::new();
    for e in fs::read_dir(dir)? {
        let e = e?;
        let name = e.file_name().to_string_lossy().into_owned();
        if name != MANIFEST {
            if !e.file_type()?.is_file() {
                return Err(CliError::Cache(format!("{} holds a non-file `{name}`", dir.display())));
            }
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn write_manifest(dir: &Path, key: &str) -> Result<(), CliError> {
    let mut files = BTreeMap::new();
    for name in artifact_names(dir)? {
        files.insert(name.clone(), hex_digest(&fs::read(dir.join(&name))?));
    }
    let m = Manifest { key: key.into(), files };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&m).expect("manifest serializes"))?;
    Ok(())
}

/// Checks that every artifact of the entry matches its recorded digest.
pub fn verify(dir: &Path, key: &str) -> Result<(), CliError> {
    let corrupt = |why: String| CliError::Cache(format!("{}: {why}", dir.display()));
    let text = fs::read_to_string(dir.join(MANIFEST)).map_err(|e| corrupt(format!("manifest unreadable ({e})")))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| corrupt(format!("manifest malformed ({e})")))?;
    if m.key != key {
        return Err(corrupt(format!("manifest key {} does not match", m.key)));
    }
    let names = artifact_names(dir)?;
    if names.iter().ne(m.files.keys()) {
        return Err(corrupt("artifact set differs from the manifest".into()));
    }
    for (name, digest) in &m.files {
        let bytes = fs::read(dir.join(name)).map_err(|e| corrupt(format!("{name} unreadable ({e})")))?;
        if &hex_digest(&bytes) != digest {
            return Err(corrupt(format!("{name} does not match its digest")));
        }
    }
    Ok(())
}

/// Copies the artifacts of an entry into `out`, each through a temporary file.
pub fn publish(entry: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for name in artifact_names(entry)? {
        let dest = out.join(&name);
        let tmp = out.join(format!(".{name}.tmp"));
        fs::copy(entry.join(&name), &tmp)?;
        fs::rename(&tmp, &dest)?;
        written.push(dest);
    }
    Ok(written)
}

/// Reads a JSON artifact of an entry.
pub fn read_json<T: for<'de> Deserialize<'de>>(entry: &Path, name: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(entry.join(name)).map_err(|e| CliError::Cache(format!("{name}: {e}")))?;
    serde_json::from_str(&text).map_err(|e| CliError::Cache(format!("{name}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_depend_on_every_input() {
        let a = key("porbit", &serde_json::json!({ "tol": 1e-14, "J": [-1.6, -1.5] }));
        let b = key("porbit", &serde_json::json!({ "tol": 1e-13, "J": [-1.6, -1.5] }));
        let c = key("splitting", &serde_json::json!({ "tol": 1e-14, "J": [-1.6, -1.5] }));
        assert_eq!(a.len(), 64);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, key("porbit", &serde_json::json!({ "tol": 1e-14, "J": [-1.6, -1.5] })));
    }

    #[test]
    fn second_request_is_a_hit() {
        let root = tempfile::tempdir().unwrap();
        let cache = Cache::new(root.path());
        let mut calls = 0;
        for expect_hit in [false, true] {
            let (dir, hit) = cache
                .get_or_make("k", |d| {
                    calls += 1;
                    fs::write(d.join("a.csv"), "x\n1\n")?;
                    Ok(())
                })
                .unwrap();
            assert_eq!(hit, expect_hit);
            assert_eq!(fs::read_to_string(dir.join("a.csv")).unwrap(), "x\n1\n");
        }
        assert_eq!(calls, 1);
    }

    #[test]
    fn failed_builds_leave_nothing() {
        let root = tempfile::tempdir().unwrap();
        let cache = Cache::new(root.path());
        let r = cache.get_or_make("k", |d| {
            fs::write(d.join("partial.csv"), "x")?;
            Err(CliError::numerical("porbit", Some(-1.5), None, "no convergence"))
        });
        assert!(matches!(r, Err(CliError::Numerical(_))));
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 0);
    }

    #[test]
    fn tampering_is_detected() {
        let root = tempfile::tempdir().unwrap();
        let cache = Cache::new(root.path());
        let (dir, _) = cache.get_or_make("k", |d| Ok(fs::write(d.join("a.csv"), "x\n1\n")?)).unwrap();
        fs::write(dir.join("a.csv"), "x\n2\n").unwrap();
        let r = cache.get_or_make("k", |_| Ok(()));
        assert!(matches!(r, Err(CliError::Cache(_))));
        fs::write(dir.join("a.csv"), "x\n1\n").unwrap();
        fs::write(dir.join("extra.csv"), "").unwrap();
        assert!(matches!(cache.get_or_make("k", |_| Ok(())), Err(CliError::Cache(_))));
        fs::remove_file(dir.join("extra.csv")).unwrap();
        fs::remove_file(dir.join(MANIFEST)).unwrap();
        assert!(matches!(cache.get_or_make("k", |_| Ok(())), Err(CliError::Cache(_))));
    }
}

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub sha256: String,
    pub bytes: u64,
}

/// SHA-256 of every artifact in an output directory, keyed by path relative
/// to it. No timestamps, so identical runs give identical bytes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: BTreeMap<String, Entry>,
}

impl Manifest {
    /// The manifest already in `dir`, or an empty one.
    pub fn load(dir: &Path) -> Self {
        fs::read(dir.join(FILE_NAME))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default()
    }

    pub fn record(&mut self, dir: &Path, file: &Path) -> Result<(), CliError> {
        let bytes = fs::read(file).map_err(|e| CliError::io(format!("hashing {}", file.display()), e))?;
        let key = file.strip_prefix(dir).unwrap_or(file);
        let key = key.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        self.files.insert(
            key,
            Entry {
                sha256: hex::encode(Sha256::digest(&bytes)),
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(FILE_NAME);
        fs::write(&path, self.to_json()).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_and_merges() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        fs::write(&a, "x\n").unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        let b = dir.path().join("sub/b.txt");
        fs::write(&b, "").unwrap();
        let mut m = Manifest::load(dir.path());
        m.record(dir.path(), &b).unwrap();
        m.record(dir.path(), &a).unwrap();
        m.write(dir.path()).unwrap();
        let again = Manifest::load(dir.path());
        assert_eq!(again, m);
        assert_eq!(again.files.keys().collect::<Vec<_>>(), ["a.csv", "sub/b.txt"]);
        assert_eq!(
            again.files["sub/b.txt"].sha256,
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}

//! Content-addressed response cache.
//!
//! One file per request digest under a two-level fan-out
//! (`<root>/ab/cd/abcd...`). Each file is `<sha256(body) hex>\n<body>`; a
//! mismatch on read is reported as [`Error::CacheCorrupt`]. Writes go through a
//! temporary file in the target directory and are renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry_path(&self, digest: &str) -> Result<PathBuf> {
        if digest.len() < 4 || !digest.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::InvalidValue {
                param: "digest".into(),
                message: format!("{digest:?} is not a hex digest"),
            });
        }
        Ok(self.root.join(&digest[0..2]).join(&digest[2..4]).join(digest))
    }

    pub fn get(&self, digest: &str) -> Result<Option<Vec<u8>>> {
        let path = self.entry_path(digest)?;
        let data = match fs::read(&path) {
            Ok(d) => d,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(path, e)),
        };
        let corrupt = || Error::CacheCorrupt {
            digest: digest.to_string(),
        };
        let split = data.iter().position(|&b| b == b'\n').ok_or_else(corrupt)?;
        let (header, body) = (&data[..split], &data[split + 1..]);
        if header != hex::encode(Sha256::digest(body)).as_bytes() {
            return Err(corrupt());
        }
        Ok(Some(body.to_vec()))
    }

    pub fn put(&self, digest: &str, body: &[u8]) -> Result<()> {
        let path = self.entry_path(digest)?;
        let dir = path.parent().expect("entry has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(hex::encode(Sha256::digest(body)).as_bytes())
            .and_then(|_| tmp.write_all(b"\n"))
            .and_then(|_| tmp.write_all(body))
            .map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const D: &str = "0123456789abcdef0123456789abcdef";

    #[test]
    fn put_get_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(cache.get(D).unwrap(), None);
        cache.put(D, b"{\"text\":\"because\"}").unwrap();
        assert_eq!(cache.get(D).unwrap().unwrap(), b"{\"text\":\"because\"}");
        assert!(dir.path().join("01").join("23").join(D).exists());
        // overwrite is atomic and replaces content
        cache.put(D, b"second").unwrap();
        assert_eq!(cache.get(D).unwrap().unwrap(), b"second");
    }

    #[test]
    fn detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        cache.put(D, b"payload").unwrap();
        let path = dir.path().join("01").join("23").join(D);
        let mut bytes = fs::read(&path).unwrap();
        *bytes.last_mut().unwrap() = b'X';
        fs::write(&path, bytes).unwrap();
        assert!(matches!(cache.get(D), Err(Error::CacheCorrupt { .. })));
        fs::write(&path, b"no newline").unwrap();
        assert!(matches!(cache.get(D), Err(Error::CacheCorrupt { .. })));
    }

    #[test]
    fn rejects_non_hex_digest() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert!(cache.get("../../etc/passwd").is_err());
    }
}

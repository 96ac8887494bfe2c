//! Content-addressed storage for document bodies.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use parking_lot::RwLock;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContentDigest([u8; 32]);

impl ContentDigest {
    pub fn of(bytes: &[u8]) -> Self {
        ContentDigest(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for ContentDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentDigest({})", self.to_hex())
    }
}

impl fmt::Display for ContentDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for ContentDigest {
    type Err = BlobError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| BlobError::BadDigest(s.to_string()))?;
        Ok(ContentDigest(out))
    }
}

impl Serialize for ContentDigest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContentDigest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum BlobError {
    #[error("no blob with digest {0}")]
    Missing(ContentDigest),
    #[error("`{0}` is not a sha-256 hex digest")]
    BadDigest(String),
    #[error("blob {0} is corrupt")]
    Corrupt(ContentDigest),
    #[error("blob storage: {0}")]
    Io(#[from] std::io::Error),
}

pub trait BlobStore: Send + Sync {
    fn put(&self, bytes: &[u8]) -> Result<ContentDigest, BlobError>;
    fn get(&self, digest: &ContentDigest) -> Result<Vec<u8>, BlobError>;
    fn contains(&self, digest: &ContentDigest) -> bool;
}

#[derive(Default)]
pub struct MemoryBlobStore {
    blobs: RwLock<HashMap<ContentDigest, Vec<u8>>>,
}

impl MemoryBlobStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl BlobStore for MemoryBlobStore {
    fn put(&self, bytes: &[u8]) -> Result<ContentDigest, BlobError> {
        let d = ContentDigest::of(bytes);
        self.blobs.write().entry(d).or_insert_with(|| bytes.to_vec());
        Ok(d)
    }

    fn get(&self, digest: &ContentDigest) -> Result<Vec<u8>, BlobError> {
        self.blobs
            .read()
            .get(digest)
            .cloned()
            .ok_or(BlobError::Missing(*digest))
    }

    fn contains(&self, digest: &ContentDigest) -> bool {
        self.blobs.read().contains_key(digest)
    }
}

/// One file per blob, named by the lowercase hex digest.
pub struct DiskBlobStore {
    dir: PathBuf,
}

impl DiskBlobStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, BlobError> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(DiskBlobStore {
            dir: dir.as_ref().to_path_buf(),
        })
    }

    fn path(&self, digest: &ContentDigest) -> PathBuf {
        self.dir.join(digest.to_hex())
    }
}

impl BlobStore for DiskBlobStore {
    fn put(&self, bytes: &[u8]) -> Result<ContentDigest, BlobError> {
        let d = ContentDigest::of(bytes);
        let path = self.path(&d);
        if path.exists() {
            return Ok(d);
        }
        let tmp = self.dir.join(format!("{}.tmp", d.to_hex()));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, &path)?;
        Ok(d)
    }

    fn get(&self, digest: &ContentDigest) -> Result<Vec<u8>, BlobError> {
        let bytes = fs::read(self.path(digest)).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => BlobError::Missing(*digest),
            _ => BlobError::Io(e),
        })?;
        if ContentDigest::of(&bytes) != *digest {
            return Err(BlobError::Corrupt(*digest));
        }
        Ok(bytes)
    }

    fn contains(&self, digest: &ContentDigest) -> bool {
        self.path(digest).is_file()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_hex_round_trip() {
        let d = ContentDigest::of(b"hello");
        assert_eq!(
            d.to_hex(),
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        assert_eq!(d.to_hex().parse::<ContentDigest>().unwrap(), d);
        assert!("zz".parse::<ContentDigest>().is_err());
    }

    #[test]
    fn disk_store_addresses_by_digest() {
        let dir = tempfile::tempdir().unwrap();
        let store = DiskBlobStore::open(dir.path()).unwrap();
        let d = store.put(b"minutes of the board").unwrap();
        assert!(dir.path().join(d.to_hex()).is_file());
        assert_eq!(store.get(&d).unwrap(), b"minutes of the board");
        assert_eq!(store.put(b"minutes of the board").unwrap(), d);
        fs::write(dir.path().join(d.to_hex()), b"tampered").unwrap();
        assert!(matches!(store.get(&d), Err(BlobError::Corrupt(_))));
        let missing = ContentDigest::of(b"nope");
        assert!(matches!(store.get(&missing), Err(BlobError::Missing(_))));
    }

    #[test]
    fn memory_store() {
        let store = MemoryBlobStore::new();
        let d = store.put(b"x").unwrap();
        assert!(store.contains(&d));
        assert_eq!(store.get(&d).unwrap(), b"x");
    }
}

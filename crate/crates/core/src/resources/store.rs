use std::collections::HashMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use subtle::ConstantTimeEq;

use crate::ledger::{Digest, Timestamp};

use super::{EvidenceEnvelope, ResourceError};

const INDEX_FILE: &str = "index.json";
const CONTENT_DIR: &str = "content";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct IndexEntry {
    media_hint: String,
    /// SHA-256 of the access key; the key itself is never stored.
    key_digest: Digest,
    content_hash: Digest,
    size: u64,
    stored_at: Timestamp,
}

/// What `store` hands back: enough to build a reference.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Minted {
    pub resource_id: String,
    pub access_key: String,
    pub content_hash: Digest,
}

/// Payload files under `content/`, metadata in `index.json`. Resources are
/// write-once; deletion removes the index entry before the file.
#[derive(Debug)]
pub struct ResourceStore {
    dir: PathBuf,
    index: RwLock<HashMap<String, IndexEntry>>,
    /// Serializes rewrites of the index file.
    persist: Mutex<()>,
}

fn io_err(path: &Path, e: std::io::Error) -> ResourceError {
    ResourceError::Io(format!("{}: {e}", path.display()))
}

fn valid_id(id: &str) -> bool {
    id.len() == 64 && id.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<(), ResourceError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

impl ResourceStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ResourceError> {
        let dir = dir.into();
        let content = dir.join(CONTENT_DIR);
        fs::create_dir_all(&content).map_err(|e| io_err(&content, e))?;
        let index_path = dir.join(INDEX_FILE);
        let index = match fs::read(&index_path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| ResourceError::Io(format!("{}: {e}", index_path.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => HashMap::new(),
            Err(e) => return Err(io_err(&index_path, e)),
        };
        Ok(ResourceStore {
            dir,
            index: RwLock::new(index),
            persist: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Path of the payload file for `resource_id`, whether or not it exists.
    pub fn content_path(&self, resource_id: &str) -> PathBuf {
        self.dir.join(CONTENT_DIR).join(resource_id)
    }

    fn save_index(&self) -> Result<(), ResourceError> {
        let _guard = self.persist.lock().unwrap();
        let bytes = serde_json::to_vec(&*self.index.read().unwrap()).map_err(|e| ResourceError::Io(e.to_string()))?;
        write_synced(&self.dir.join(INDEX_FILE), &bytes)
    }

    pub fn store(&self, payload: &[u8], media_hint: &str) -> Result<Minted, ResourceError> {
        let mut rng = rand::rngs::OsRng;
        let mut salt = [0u8; 16];
        let mut key = [0u8; 32];
        rng.fill_bytes(&mut salt);
        rng.fill_bytes(&mut key);
        let resource_id = Digest::of_parts(&[payload, &salt]).to_hex();
        let access_key = hex::encode(key);
        let content_hash = Digest::of(payload);

        write_synced(&self.content_path(&resource_id), payload)?;
        let entry = IndexEntry {
            media_hint: media_hint.to_string(),
            key_digest: Digest::of(access_key.as_bytes()),
            content_hash,
            size: payload.len() as u64,
            stored_at: Timestamp::now(),
        };
        self.index.write().unwrap().insert(resource_id.clone(), entry);
        self.save_index()?;
        Ok(Minted {
            resource_id,
            access_key,
            content_hash,
        })
    }

    /// Checks `access_key` in constant time. Unknown ids go through the same
    /// comparison against a dummy digest.
    fn authorize(&self, resource_id: &str, access_key: &str) -> Result<IndexEntry, ResourceError> {
        let presented = Digest::of(access_key.as_bytes());
        let found = valid_id(resource_id)
            .then(|| self.index.read().unwrap().get(resource_id).cloned())
            .flatten();
        let expected = found.as_ref().map_or(Digest::ZERO, |e| e.key_digest);
        let key_ok: bool = presented.as_bytes().ct_eq(expected.as_bytes()).into();
        match found {
            None => Err(ResourceError::NotFound(resource_id.to_string())),
            Some(_) if !key_ok => Err(ResourceError::WrongKey(resource_id.to_string())),
            Some(entry) => Ok(entry),
        }
    }

    pub fn retrieve(&self, resource_id: &str, access_key: &str) -> Result<(Vec<u8>, String), ResourceError> {
        let entry = self.authorize(resource_id, access_key)?;
        let path = self.content_path(resource_id);
        match fs::read(&path) {
            Ok(payload) => Ok((payload, entry.media_hint)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(ResourceError::NotFound(resource_id.to_string())),
            Err(e) => Err(io_err(&path, e)),
        }
    }

    pub fn envelope(&self, resource_id: &str, access_key: &str) -> Result<EvidenceEnvelope, ResourceError> {
        let entry = self.authorize(resource_id, access_key)?;
        let (payload, media_hint) = self.retrieve(resource_id, access_key)?;
        Ok(EvidenceEnvelope {
            resource_id: resource_id.to_string(),
            access_key: access_key.to_string(),
            media_hint,
            payload,
            stored_at: entry.stored_at,
        })
    }

    pub fn delete(&self, resource_id: &str, access_key: &str) -> Result<(), ResourceError> {
        self.authorize(resource_id, access_key)?;
        if self.index.write().unwrap().remove(resource_id).is_none() {
            // Lost a race with a concurrent delete.
            return Err(ResourceError::NotFound(resource_id.to_string()));
        }
        self.save_index()?;
        let path = self.content_path(resource_id);
        match fs::remove_file(&path) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(io_err(&path, e)),
            _ => Ok(()),
        }
    }
}

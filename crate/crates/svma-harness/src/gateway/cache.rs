//! On-disk response cache.
//!
//! One JSON file per key under `cache/responses/<key-prefix>/<key>`.
//! Writes go through a temp file and atomic rename so concurrent
//! readers never observe a partial entry. Corrupt entries are treated
//! as misses and replaced.

use std::fs;
use std::path::PathBuf;

use super::{ChatReply, GatewayError};

pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ResponseCache { root: root.into() }
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<ChatReply> {
        let path = self.entry_path(key);
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice(&bytes) {
            Ok(reply) => Some(reply),
            Err(e) => {
                log::warn!("corrupt cache entry {}, treating as miss: {e}", path.display());
                None
            }
        }
    }

    pub fn put(&self, key: &str, reply: &ChatReply) -> Result<(), GatewayError> {
        let path = self.entry_path(key);
        let dir = path.parent().expect("entry path has parent");
        let io_err = |source: std::io::Error| GatewayError::Cache {
            path: path.display().to_string(),
            source,
        };
        fs::create_dir_all(dir).map_err(io_err)?;
        let bytes = serde_json::to_vec(reply).expect("reply serializes");
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, &bytes).map_err(io_err)?;
        fs::rename(&tmp, &path).map_err(io_err)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ReplyStatus;

    fn reply(text: &str) -> ChatReply {
        ChatReply {
            status: ReplyStatus::Completed,
            text: text.into(),
            usage: None,
            created_unix_ms: 42,
        }
    }

    #[test]
    fn round_trips_entries() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let key = "ab".repeat(32);
        assert!(cache.get(&key).is_none());
        cache.put(&key, &reply("hello")).unwrap();
        assert_eq!(cache.get(&key).unwrap().text, "hello");
    }

    #[test]
    fn corrupt_entry_is_a_miss_and_replaceable() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let key = "cd".repeat(32);
        cache.put(&key, &reply("good")).unwrap();
        let path = dir.path().join(&key[..2]).join(format!("{key}.json"));
        fs::write(&path, b"{not json").unwrap();
        assert!(cache.get(&key).is_none());
        cache.put(&key, &reply("replaced")).unwrap();
        assert_eq!(cache.get(&key).unwrap().text, "replaced");
    }
}

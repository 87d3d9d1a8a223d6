use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::ledger::{parse_dump, Block};

use super::NodeError;

const LOG_FILE: &str = "blocks.jsonl";

/// Append-only block log, one dump record per line, fsynced per append.
#[derive(Debug)]
pub struct BlockLog {
    path: PathBuf,
    file: File,
}

impl BlockLog {
    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join(LOG_FILE)
    }

    /// Reads whatever `dir` holds; a missing log is an empty chain.
    pub fn load(dir: &Path) -> Result<Vec<Block>, NodeError> {
        let path = Self::path_in(dir);
        match fs::read_to_string(&path) {
            Ok(text) => parse_dump(&text).map_err(|e| NodeError::CorruptStore(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(NodeError::Storage(format!("{}: {e}", path.display()))),
        }
    }

    pub fn open(dir: &Path) -> Result<Self, NodeError> {
        fs::create_dir_all(dir).map_err(|e| NodeError::Storage(format!("{}: {e}", dir.display())))?;
        let path = Self::path_in(dir);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| NodeError::Storage(format!("{}: {e}", path.display())))?;
        Ok(BlockLog { path, file })
    }

    pub fn append(&mut self, block: &Block) -> Result<(), NodeError> {
        let mut line = serde_json::to_vec(block).map_err(|e| NodeError::Storage(e.to_string()))?;
        line.push(b'\n');
        let io = |e: std::io::Error| NodeError::Storage(format!("{}: {e}", self.path.display()));
        self.file.write_all(&line).map_err(io)?;
        self.file.sync_data().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{ActorId, Credential, Role, Timestamp};

    #[test]
    fn append_then_load() {
        let dir = tempfile::tempdir().unwrap();
        assert!(BlockLog::load(dir.path()).unwrap().is_empty());
        let c = Credential::generate(ActorId::new("ES").unwrap(), Role::Institution);
        let g = Block::genesis("c", "s", &c, Timestamp(1)).unwrap();
        let mut log = BlockLog::open(dir.path()).unwrap();
        log.append(&g).unwrap();
        drop(log);
        assert_eq!(BlockLog::load(dir.path()).unwrap(), vec![g]);
    }

    #[test]
    fn garbage_is_corrupt_store() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(BlockLog::path_in(dir.path()), "not json\n").unwrap();
        assert!(matches!(BlockLog::load(dir.path()), Err(NodeError::CorruptStore(_))));
    }
}

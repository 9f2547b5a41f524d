//! File-per-run event logs: `<root>/<workspace>/runs/<runId>.log`, one JSON
//! record per line.
//!
//! A run log is opened for appending under an exclusive advisory lock, so a
//! second writer (in this process or another) gets `Locked`; the lock dies
//! with the process. On open, a torn final line left by a crash is cut
//! back to the last newline. Only newline-terminated lines are records.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use graphflow_core::store::{check_append, EventRecord, EventStore, NewEvent, StoreError};

/// Open run handles kept before they are all released.
const MAX_OPEN: usize = 256;

/// When appended bytes reach the disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Durability {
    /// fsync before `append` returns.
    #[default]
    EveryAppend,
    /// fsync on `flush`.
    Batch,
}

struct RunLog {
    file: File,
    last_seq: u64,
    closed: bool,
    dirty: bool,
}

pub struct FileStore {
    root: PathBuf,
    pub durability: Durability,
    open: HashMap<(String, String), RunLog>,
    /// Torn tails cut since this store was created.
    pub repairs: u64,
}

/// Workspace and run names become path segments, so keep them plain.
pub fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.len() <= 128 && !s.starts_with('.') && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn io(e: std::io::Error) -> StoreError {
    StoreError::Io(e.to_string())
}

/// Complete records in `bytes`, and the length of the newline-terminated prefix.
fn parse_complete(bytes: &[u8]) -> Result<(Vec<EventRecord>, usize), StoreError> {
    let end = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    let text = std::str::from_utf8(&bytes[..end]).map_err(|e| StoreError::Corrupt(e.to_string()))?;
    let records = text.lines().filter(|l| !l.is_empty()).map(EventRecord::from_line).collect::<Result<Vec<_>, _>>()?;
    Ok((records, end))
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io)?;
        Ok(FileStore { root, durability: Durability::EveryAppend, open: HashMap::new(), repairs: 0 })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn workspace_dir(&self, ws: &str) -> PathBuf {
        self.root.join(ws)
    }

    fn runs_dir(&self, ws: &str) -> Result<PathBuf, StoreError> {
        if !valid_name(ws) || !self.has_workspace(ws) {
            return Err(StoreError::WorkspaceUnknown(ws.to_string()));
        }
        Ok(self.root.join(ws).join("runs"))
    }

    fn log_path(&self, ws: &str, run: &str) -> Result<PathBuf, StoreError> {
        let dir = self.runs_dir(ws)?;
        if !valid_name(run) {
            return Err(StoreError::RunUnknown(run.to_string()));
        }
        Ok(dir.join(format!("{run}.log")))
    }

    fn writer(&mut self, ws: &str, run: &str) -> Result<&mut RunLog, StoreError> {
        let key = (ws.to_string(), run.to_string());
        if !self.open.contains_key(&key) {
            let path = self.log_path(ws, run)?;
            let fresh = !path.exists();
            let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path).map_err(io)?;
            match file.try_lock() {
                Ok(()) => {}
                Err(fs::TryLockError::WouldBlock) => return Err(StoreError::Locked(run.to_string())),
                Err(fs::TryLockError::Error(e)) => return Err(io(e)),
            }
            if fresh {
                if let Some(dir) = path.parent() {
                    File::open(dir).and_then(|d| d.sync_all()).map_err(io)?;
                }
            }
            let mut bytes = Vec::new();
            file.seek(SeekFrom::Start(0)).map_err(io)?;
            file.read_to_end(&mut bytes).map_err(io)?;
            let (records, end) = parse_complete(&bytes)?;
            if end < bytes.len() {
                file.set_len(end as u64).map_err(io)?;
                file.sync_all().map_err(io)?;
                self.repairs += 1;
            }
            let log = RunLog {
                file,
                last_seq: records.last().map_or(0, |r| r.seq),
                closed: records.iter().any(|r| r.kind.is_terminal()),
                dirty: false,
            };
            self.open.insert(key.clone(), log);
        }
        Ok(self.open.get_mut(&key).expect("inserted above"))
    }

    /// Releases the locks this store holds.
    pub fn close(&mut self) -> Result<(), StoreError> {
        EventStore::flush(self)?;
        self.open.clear();
        Ok(())
    }

    pub fn workspaces(&self) -> Result<Vec<String>, StoreError> {
        let mut out = Vec::new();
        for e in fs::read_dir(&self.root).map_err(io)? {
            let e = e.map_err(io)?;
            let name = e.file_name().to_string_lossy().into_owned();
            if valid_name(&name) && e.path().join("runs").is_dir() {
                out.push(name);
            }
        }
        out.sort();
        Ok(out)
    }
}

impl EventStore for FileStore {
    fn create_workspace(&mut self, ws: &str) -> Result<(), StoreError> {
        if !valid_name(ws) {
            return Err(StoreError::WorkspaceUnknown(ws.to_string()));
        }
        fs::create_dir_all(self.root.join(ws).join("runs")).map_err(io)
    }

    fn has_workspace(&self, ws: &str) -> bool {
        valid_name(ws) && self.root.join(ws).join("runs").is_dir()
    }

    fn append(&mut self, ws: &str, run_id: &str, ev: NewEvent) -> Result<u64, StoreError> {
        let durability = self.durability;
        let log = self.writer(ws, run_id)?;
        let seq = check_append(log.last_seq, log.closed, run_id, &ev)?;
        let terminal = ev.kind.is_terminal();
        let mut line = ev.into_record(seq, run_id).to_line();
        line.push('\n');
        log.file.write_all(line.as_bytes()).map_err(io)?;
        match durability {
            Durability::EveryAppend => log.file.sync_data().map_err(io)?,
            Durability::Batch => log.dirty = true,
        }
        log.last_seq = seq;
        log.closed |= terminal;
        // Finished runs take only checkpoints, so give back the handle.
        if terminal {
            if log.dirty {
                log.file.sync_data().map_err(io)?;
            }
            self.open.remove(&(ws.to_string(), run_id.to_string()));
        } else if self.open.len() > MAX_OPEN {
            self.close()?;
        }
        Ok(seq)
    }

    fn flush(&mut self) -> Result<(), StoreError> {
        for log in self.open.values_mut().filter(|l| l.dirty) {
            log.file.sync_data().map_err(io)?;
            log.dirty = false;
        }
        Ok(())
    }

    fn read(&self, ws: &str, run_id: &str, from_seq: u64) -> Result<Vec<EventRecord>, StoreError> {
        let path = self.log_path(ws, run_id)?;
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::RunUnknown(run_id.to_string())),
            Err(e) => return Err(io(e)),
        };
        let (records, _) = parse_complete(&bytes)?;
        if records.is_empty() && !self.open.contains_key(&(ws.to_string(), run_id.to_string())) {
            return Err(StoreError::RunUnknown(run_id.to_string()));
        }
        Ok(records.into_iter().filter(|r| r.seq >= from_seq).collect())
    }

    fn run_ids(&self, ws: &str) -> Result<Vec<String>, StoreError> {
        let dir = self.runs_dir(ws)?;
        let mut out = Vec::new();
        for e in fs::read_dir(dir).map_err(io)? {
            let name = e.map_err(io)?.file_name().to_string_lossy().into_owned();
            if let Some(run) = name.strip_suffix(".log") {
                out.push(run.to_string());
            }
        }
        out.sort();
        Ok(out)
    }
}

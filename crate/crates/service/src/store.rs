//! Session registry with optimistic concurrency and optional patch-log
//! persistence.
//!
//! With a state directory, each session keeps `<id>.session.json` (the
//! upload) and `<id>.patches.jsonl` (one accepted patch per line).
//! Opening the directory replays every log.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use crate::session::{CreateSession, Patch, PatchSummary, SessionError, SessionState};

struct Slot {
    state: Mutex<Arc<SessionState>>,
}

#[derive(Default)]
pub struct Store {
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    state_dir: Option<PathBuf>,
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> SessionError {
    SessionError::Internal(format!("{}: {e}", path.display()))
}

impl Store {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a state directory and replays its logs.
    pub fn open(dir: &Path) -> Result<Self, SessionError> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let store = Self {
            sessions: RwLock::default(),
            state_dir: Some(dir.to_path_buf()),
        };
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| io_error(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".session.json"))
            .collect();
        entries.sort();
        for path in entries {
            let name = path.file_name().unwrap().to_string_lossy().to_string();
            let id = name.trim_end_matches(".session.json").to_string();
            let upload: CreateSession = serde_json::from_slice(&fs::read(&path).map_err(|e| io_error(&path, e))?)
                .map_err(|e| io_error(&path, e))?;
            let mut state = SessionState::create(id.clone(), &upload)?;
            let log = dir.join(format!("{id}.patches.jsonl"));
            if log.exists() {
                let text = fs::read_to_string(&log).map_err(|e| io_error(&log, e))?;
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    let patch: Patch = serde_json::from_str(line).map_err(|e| io_error(&log, e))?;
                    if patch.base_revision != state.revision {
                        return Err(io_error(&log, format!("patch for revision {} out of order", patch.base_revision)));
                    }
                    state = state.apply(&patch.op)?.0;
                }
            }
            log::info!("restored session {id} at revision {}", state.revision);
            store.insert(state);
        }
        Ok(store)
    }

    fn insert(&self, state: SessionState) {
        let id = state.id.clone();
        let slot = Arc::new(Slot {
            state: Mutex::new(Arc::new(state)),
        });
        self.sessions.write().expect("registry lock").insert(id, slot);
    }

    pub fn create(&self, upload: &CreateSession) -> Result<Arc<SessionState>, SessionError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let state = SessionState::create(id.clone(), upload)?;
        if let Some(dir) = &self.state_dir {
            let path = dir.join(format!("{id}.session.json"));
            let json = serde_json::to_vec(upload).expect("serializable");
            fs::write(&path, json).map_err(|e| io_error(&path, e))?;
        }
        let snapshot = Arc::new(state.clone());
        self.insert(state);
        Ok(snapshot)
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, SessionError> {
        self.sessions
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    /// Current immutable snapshot.
    pub fn get(&self, id: &str) -> Result<Arc<SessionState>, SessionError> {
        Ok(self.slot(id)?.state.lock().expect("session lock").clone())
    }

    /// Applies a patch if `base_revision` is current. Patches to one
    /// session serialize on its lock; readers keep their snapshots.
    pub fn patch(&self, id: &str, patch: &Patch) -> Result<PatchSummary, SessionError> {
        let slot = self.slot(id)?;
        let mut guard = slot.state.lock().expect("session lock");
        if patch.base_revision != guard.revision {
            return Err(SessionError::Conflict {
                base: patch.base_revision,
                current: guard.revision,
            });
        }
        let (next, summary) = guard.apply(&patch.op)?;
        if let Some(dir) = &self.state_dir {
            let path = dir.join(format!("{id}.patches.jsonl"));
            let mut line = serde_json::to_vec(patch).expect("serializable");
            line.push(b'\n');
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .and_then(|mut f| f.write_all(&line))
                .map_err(|e| io_error(&path, e))?;
        }
        *guard = Arc::new(next);
        Ok(summary)
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("registry lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

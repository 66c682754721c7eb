//! Session registry with an append-only JSON-lines journal.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::session::{BatchRecord, Session, SessionDefinition};

/// One line of the journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JournalEvent {
    Create { id: String, definition: SessionDefinition },
    Batch { id: String, batch: BatchRecord },
}

struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    fn append(&mut self, event: &JournalEvent) -> Result<(), ServiceError> {
        let mut line = serde_json::to_vec(event).map_err(|e| ServiceError::Journal(e.to_string()))?;
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.flush())
            .map_err(|e| ServiceError::Journal(format!("{}: {e}", self.path.display())))
    }
}

/// Reads every event from a journal file.
pub fn read_journal(path: &Path) -> Result<Vec<JournalEvent>, ServiceError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(ServiceError::Journal(format!("{}: {e}", path.display()))),
    };
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ServiceError::Journal(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line)
            .map_err(|e| ServiceError::Journal(format!("{} line {}: {e}", path.display(), i + 1)))?;
        events.push(event);
    }
    Ok(events)
}

#[derive(Default)]
pub struct SessionStore {
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Session>>>>,
    journal: Option<Mutex<Journal>>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a journal and rebuilds every session from it.
    pub fn with_journal(path: &Path) -> Result<Self, ServiceError> {
        let mut store = Self::in_memory();
        for event in read_journal(path)? {
            store.replay(event)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ServiceError::Journal(format!("{}: {e}", path.display())))?;
        store.journal = Some(Mutex::new(Journal {
            path: path.to_path_buf(),
            file,
        }));
        Ok(store)
    }

    /// Applies an event without journaling it.
    pub fn replay(&self, event: JournalEvent) -> Result<(), ServiceError> {
        match event {
            JournalEvent::Create { id, definition } => {
                let session = Session::new(id.clone(), definition)?;
                self.sessions.write().insert(id, Arc::new(Mutex::new(session)));
            }
            JournalEvent::Batch { id, batch } => {
                let session = self.session(&id)?;
                session.lock().apply(&batch)?;
            }
        }
        Ok(())
    }

    fn log(&self, event: &JournalEvent) -> Result<(), ServiceError> {
        match &self.journal {
            Some(j) => j.lock().append(event),
            None => Ok(()),
        }
    }

    pub fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.read().keys().cloned().collect()
    }

    pub fn create(&self, definition: SessionDefinition) -> Result<Session, ServiceError> {
        let id = uuid::Uuid::new_v4().to_string();
        self.create_with_id(id, definition)
    }

    pub fn create_with_id(&self, id: String, definition: SessionDefinition) -> Result<Session, ServiceError> {
        let session = Session::new(id.clone(), definition.clone())?;
        let mut sessions = self.sessions.write();
        if sessions.contains_key(&id) {
            return Err(ServiceError::validation("id", format!("session `{id}` already exists")));
        }
        self.log(&JournalEvent::Create { id: id.clone(), definition })?;
        sessions.insert(id, Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    /// Records a batch: validated first, journaled, then committed under the
    /// session's lock.
    pub fn record_batch(&self, id: &str, batch: BatchRecord) -> Result<Session, ServiceError> {
        let handle = self.session(id)?;
        let mut session = handle.lock();
        let mut next = session.clone();
        if next.apply(&batch)? {
            self.log(&JournalEvent::Batch {
                id: id.to_string(),
                batch,
            })?;
            *session = next;
        }
        Ok(session.clone())
    }

    /// Clone of the latest committed state.
    pub fn snapshot(&self, id: &str) -> Result<Session, ServiceError> {
        Ok(self.session(id)?.lock().clone())
    }
}

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ConsultError, ConsultSession, ConsultTurn, SessionConfig};

/// Session persistence. Turns are append-only.
pub trait SessionStore: Send + Sync {
    fn create(&self, session: &ConsultSession) -> Result<(), ConsultError>;
    fn append_turn(&self, session_id: &str, turn: &ConsultTurn) -> Result<(), ConsultError>;
    fn get(&self, session_id: &str) -> Result<Option<ConsultSession>, ConsultError>;
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    sessions: Mutex<HashMap<String, ConsultSession>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SessionStore for MemoryStore {
    fn create(&self, session: &ConsultSession) -> Result<(), ConsultError> {
        let mut map = self.sessions.lock().unwrap();
        if map.contains_key(&session.session_id) {
            return Err(ConsultError::Store(format!("session {} already exists", session.session_id)));
        }
        map.insert(session.session_id.clone(), session.clone());
        Ok(())
    }

    fn append_turn(&self, session_id: &str, turn: &ConsultTurn) -> Result<(), ConsultError> {
        let mut map = self.sessions.lock().unwrap();
        let s = map.get_mut(session_id).ok_or_else(|| ConsultError::UnknownSession(session_id.to_string()))?;
        s.turns.push(turn.clone());
        Ok(())
    }

    fn get(&self, session_id: &str) -> Result<Option<ConsultSession>, ConsultError> {
        Ok(self.sessions.lock().unwrap().get(session_id).cloned())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Session { session_id: String, created_at_ms: u64, config: SessionConfig },
    Turn(Box<ConsultTurn>),
}

/// One `<session_id>.jsonl` file per session under `dir`: a header line, then one line per turn.
#[derive(Debug)]
pub struct JsonlStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl JsonlStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ConsultError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| ConsultError::Store(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir, write_lock: Mutex::new(()) })
    }

    fn path(&self, session_id: &str) -> Result<PathBuf, ConsultError> {
        if session_id.is_empty() || !session_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(ConsultError::UnknownSession(session_id.to_string()));
        }
        Ok(self.dir.join(format!("{session_id}.jsonl")))
    }

    fn append(path: &Path, line: &Line, create: bool) -> Result<(), ConsultError> {
        let io = |e: std::io::Error| ConsultError::Store(format!("{}: {e}", path.display()));
        let mut f = if create {
            OpenOptions::new().write(true).create_new(true).open(path).map_err(io)?
        } else {
            OpenOptions::new().append(true).open(path).map_err(io)?
        };
        let mut buf = serde_json::to_vec(line).map_err(|e| ConsultError::Store(e.to_string()))?;
        buf.push(b'\n');
        f.write_all(&buf).map_err(io)
    }
}

impl SessionStore for JsonlStore {
    fn create(&self, session: &ConsultSession) -> Result<(), ConsultError> {
        let _g = self.write_lock.lock().unwrap();
        let path = self.path(&session.session_id)?;
        Self::append(
            &path,
            &Line::Session { session_id: session.session_id.clone(), created_at_ms: session.created_at_ms, config: session.config.clone() },
            true,
        )?;
        for t in &session.turns {
            Self::append(&path, &Line::Turn(Box::new(t.clone())), false)?;
        }
        Ok(())
    }

    fn append_turn(&self, session_id: &str, turn: &ConsultTurn) -> Result<(), ConsultError> {
        let _g = self.write_lock.lock().unwrap();
        let path = self.path(session_id)?;
        if !path.exists() {
            return Err(ConsultError::UnknownSession(session_id.to_string()));
        }
        Self::append(&path, &Line::Turn(Box::new(turn.clone())), false)
    }

    fn get(&self, session_id: &str) -> Result<Option<ConsultSession>, ConsultError> {
        let path = match self.path(session_id) {
            Ok(p) if p.exists() => p,
            _ => return Ok(None),
        };
        let f = File::open(&path).map_err(|e| ConsultError::Store(format!("{}: {e}", path.display())))?;
        let mut session: Option<ConsultSession> = None;
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| ConsultError::Store(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line =
                serde_json::from_str(&line).map_err(|e| ConsultError::Store(format!("{}:{}: {e}", path.display(), i + 1)))?;
            match (parsed, session.as_mut()) {
                (Line::Session { session_id, created_at_ms, config }, None) => {
                    session = Some(ConsultSession { session_id, created_at_ms, config, turns: Vec::new() })
                }
                (Line::Turn(t), Some(s)) => s.turns.push(*t),
                _ => return Err(ConsultError::Store(format!("{}:{}: unexpected record", path.display(), i + 1))),
            }
        }
        Ok(session)
    }
}

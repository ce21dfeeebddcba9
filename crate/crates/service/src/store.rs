//! Durable logging: an append-only `events.jsonl` and a `sessions.jsonl`
//! snapshot per completed session. Without a data directory both live in
//! memory only.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use surveil_core::session::{read_jsonl, EventRecord, SessionLog};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SESSIONS_FILE: &str = "sessions.jsonl";

#[derive(Debug, Default)]
struct Inner {
    events: Vec<EventRecord>,
    sessions: Vec<SessionLog>,
    files: Option<(File, File)>,
}

#[derive(Debug, Default)]
pub struct Store {
    dir: Option<PathBuf>,
    inner: Mutex<Inner>,
}

fn line<T: serde::Serialize>(item: &T) -> Vec<u8> {
    let mut buf = serde_json::to_vec(item).expect("log records serialize");
    buf.push(b'\n');
    buf
}

fn open_append(path: &Path) -> std::io::Result<File> {
    OpenOptions::new().create(true).append(true).open(path)
}

impl Store {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) the log files in `dir` and loads what is there.
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let load = |name: &str| -> std::io::Result<File> { open_append(&dir.join(name)) };
        let events_path = dir.join(EVENTS_FILE);
        let sessions_path = dir.join(SESSIONS_FILE);
        let files = (load(EVENTS_FILE)?, load(SESSIONS_FILE)?);
        let invalid = |e: surveil_core::Error| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string());
        let events = read_jsonl(BufReader::new(File::open(&events_path)?)).map_err(invalid)?;
        let sessions = read_jsonl(BufReader::new(File::open(&sessions_path)?)).map_err(invalid)?;
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            inner: Mutex::new(Inner { events, sessions, files: Some(files) }),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Appends events in order; each record is written with a single call.
    pub fn append_events(&self, records: &[EventRecord]) -> std::io::Result<()> {
        let mut inner = self.inner.lock().expect("store lock");
        if let Some((events, _)) = inner.files.as_mut() {
            for r in records {
                events.write_all(&line(r))?;
            }
            events.flush()?;
        }
        inner.events.extend_from_slice(records);
        Ok(())
    }

    pub fn append_session(&self, log: &SessionLog) -> std::io::Result<()> {
        let mut inner = self.inner.lock().expect("store lock");
        if let Some((_, sessions)) = inner.files.as_mut() {
            sessions.write_all(&line(log))?;
            sessions.flush()?;
        }
        inner.sessions.push(log.clone());
        Ok(())
    }

    pub fn events(&self) -> Vec<EventRecord> {
        self.inner.lock().expect("store lock").events.clone()
    }

    pub fn sessions(&self) -> Vec<SessionLog> {
        self.inner.lock().expect("store lock").sessions.clone()
    }
}

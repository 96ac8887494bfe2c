//! Single-writer service over the engine with event-log persistence.
//!
//! Data directory layout:
//!
//! * `events.log`: one JSON event per line, fsynced before a mutation is
//!   acknowledged. Sequence numbers are dense from 1.
//! * `denials.log`: refused mutations with their reason codes. Never replayed.
//! * `snapshot.txt`: latest snapshot, written atomically.
//! * `blobs/`: document contents named by their sha-256 digest.
//!
//! Startup loads the snapshot when present and replays the log tail after it.
//! A final line cut short by a crash is dropped; it was never acknowledged.

pub mod http;

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{DenyReason, UserId};
use crate::blob::{BlobStore, ContentDigest, DiskBlobStore};
use crate::engine::{Command, Engine, EngineError, Outcome};
use crate::fixture::CommandSink;
use crate::snapshot::{Snapshot, SnapshotError};

pub const EVENTS_FILE: &str = "events.log";
pub const DENIALS_FILE: &str = "denials.log";
pub const SNAPSHOT_FILE: &str = "snapshot.txt";
pub const BLOBS_DIR: &str = "blobs";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub actor: UserId,
    pub op: String,
    pub payload: Command,
    pub result: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Denial {
    /// Sequence number of the state the command was evaluated against.
    pub after_seq: u64,
    pub actor: UserId,
    pub op: String,
    pub payload: Command,
    pub reason: String,
    pub deny: Option<DenyReason>,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("storage failure: {0}")]
    Storage(#[from] std::io::Error),
    #[error("event log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    pub data_dir: PathBuf,
    /// Write a snapshot after every this many events; 0 disables.
    pub snapshot_every: u64,
}

/// A mutation that made it into the log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub seq: u64,
    pub result: Outcome,
}

/// A refused or failed mutation, with the sequence number it was judged at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Refusal {
    pub seq: u64,
    pub error: EngineError,
}

struct Writer {
    log: File,
    denials: File,
}

pub struct Service {
    dir: PathBuf,
    snapshot_every: u64,
    writer: Mutex<Writer>,
    current: RwLock<(u64, Arc<Engine>)>,
    blobs: DiskBlobStore,
}

fn append_line(f: &mut File, value: &impl Serialize, sync: bool) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(value).map_err(std::io::Error::other)?;
    line.push(b'\n');
    f.write_all(&line)?;
    if sync {
        f.sync_data()?;
    }
    Ok(())
}

/// Reads the complete lines of an event log. Returns the events and the byte
/// length of the well-formed prefix.
pub fn read_events(path: &Path) -> Result<(Vec<Event>, u64), ServiceError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(e.into()),
    };
    let mut events = Vec::new();
    let mut good = 0usize;
    for (i, chunk) in bytes.split_inclusive(|b| *b == b'\n').enumerate() {
        if chunk.last() != Some(&b'\n') {
            // Torn write at the tail.
            break;
        }
        let ev: Event = serde_json::from_slice(chunk).map_err(|e| ServiceError::CorruptLog {
            line: i + 1,
            message: e.to_string(),
        })?;
        if ev.seq != events.len() as u64 + 1 {
            return Err(ServiceError::CorruptLog {
                line: i + 1,
                message: format!("expected sequence {}, found {}", events.len() + 1, ev.seq),
            });
        }
        events.push(ev);
        good += chunk.len();
    }
    Ok((events, good as u64))
}

/// Applies `events` on top of `engine`, checking each recorded result.
pub fn replay(mut engine: Engine, events: &[Event]) -> Result<Engine, ServiceError> {
    for ev in events {
        let out = engine.apply(ev.actor, &ev.payload, ev.seq).map_err(|e| ServiceError::CorruptLog {
            line: ev.seq as usize,
            message: format!("event no longer applies: {e}"),
        })?;
        if out != ev.result {
            return Err(ServiceError::CorruptLog {
                line: ev.seq as usize,
                message: "replayed result differs from the recorded one".into(),
            });
        }
    }
    Ok(engine)
}

impl Service {
    pub fn open(cfg: &Config) -> Result<Self, ServiceError> {
        let dir = cfg.data_dir.clone();
        fs::create_dir_all(&dir)?;
        let blobs = DiskBlobStore::open(dir.join(BLOBS_DIR)).map_err(|e| std::io::Error::other(e.to_string()))?;

        let log_path = dir.join(EVENTS_FILE);
        let (events, good_len) = read_events(&log_path)?;
        let (base_seq, base) = match fs::read_to_string(dir.join(SNAPSHOT_FILE)) {
            Ok(text) => {
                let (snap, engine) = Snapshot::parse(&text)?;
                (snap.seq, engine)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => (0, Engine::new()),
            Err(e) => return Err(e.into()),
        };
        if base_seq > events.len() as u64 {
            return Err(ServiceError::CorruptLog {
                line: events.len(),
                message: format!("snapshot at {base_seq} is ahead of the log"),
            });
        }
        let engine = replay(base, &events[base_seq as usize..])?;
        let seq = events.len() as u64;

        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        if log.metadata()?.len() != good_len {
            log::warn!("dropping torn tail of {}", log_path.display());
            log.set_len(good_len)?;
            log.sync_all()?;
        }
        let denials = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(DENIALS_FILE))?;
        log::info!("opened {} at seq {seq}", dir.display());
        Ok(Service {
            dir,
            snapshot_every: cfg.snapshot_every,
            writer: Mutex::new(Writer { log, denials }),
            current: RwLock::new((seq, Arc::new(engine))),
            blobs,
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.dir
    }

    /// Latest committed state and its sequence number.
    pub fn view(&self) -> (u64, Arc<Engine>) {
        let cur = self.current.read();
        (cur.0, Arc::clone(&cur.1))
    }

    pub fn seq(&self) -> u64 {
        self.current.read().0
    }

    pub fn blobs(&self) -> &DiskBlobStore {
        &self.blobs
    }

    fn check_blob(&self, cmd: &Command) -> Result<(), EngineError> {
        let digest = match cmd {
            Command::CreateDocument { content, .. } | Command::Checkin { content, .. } => content,
            _ => return Ok(()),
        };
        if self.blobs.contains(digest) {
            Ok(())
        } else {
            Err(EngineError::Malformed(format!("content {digest} has not been uploaded")))
        }
    }

    /// Applies one mutation. Success appends exactly one event; refusal goes
    /// to the denials stream and leaves the log untouched.
    pub fn submit(&self, actor: UserId, cmd: Command) -> Result<Receipt, Refusal> {
        let mut w = self.writer.lock();
        let (seq, engine) = self.view();
        let mut next = (*engine).clone();
        let applied = self
            .check_blob(&cmd)
            .and_then(|()| next.apply(actor, &cmd, seq + 1));
        let result = match applied {
            Ok(r) => r,
            Err(error) => {
                let d = Denial {
                    after_seq: seq,
                    actor,
                    op: cmd.op_name().to_string(),
                    payload: cmd,
                    reason: error.code().to_string(),
                    deny: error.deny_reason(),
                    message: error.to_string(),
                };
                if let Err(e) = append_line(&mut w.denials, &d, false) {
                    log::error!("could not record denial: {e}");
                }
                return Err(Refusal { seq, error });
            }
        };
        let ev = Event {
            seq: seq + 1,
            actor,
            op: cmd.op_name().to_string(),
            payload: cmd,
            result,
        };
        if let Err(e) = append_line(&mut w.log, &ev, true) {
            return Err(Refusal {
                seq,
                error: EngineError::Storage(e.to_string()),
            });
        }
        *self.current.write() = (ev.seq, Arc::new(next));
        drop(w);
        if self.snapshot_every > 0 && ev.seq.is_multiple_of(self.snapshot_every) {
            if let Err(e) = self.snapshot_and_compact() {
                log::error!("snapshot at {} failed: {e}", ev.seq);
            }
        }
        Ok(Receipt {
            seq: ev.seq,
            result: ev.result,
        })
    }

    /// Writes a snapshot of the current state. The event log is kept whole so
    /// the audit trail and pure replay stay available.
    pub fn snapshot_and_compact(&self) -> Result<Snapshot, ServiceError> {
        let _w = self.writer.lock();
        let (seq, engine) = self.view();
        let snap = Snapshot::capture(&engine, seq);
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(snap.to_text().as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE))?;
        log::info!("snapshot written at seq {seq}");
        Ok(snap)
    }

    /// Events with `seq >= from`.
    pub fn audit(&self, from: u64) -> Result<Vec<Event>, ServiceError> {
        let seq = self.seq();
        let (events, _) = read_events(&self.dir.join(EVENTS_FILE))?;
        Ok(events
            .into_iter()
            .filter(|e| e.seq >= from && e.seq <= seq)
            .collect())
    }

    pub fn denials(&self, from_seq: u64) -> Result<Vec<Denial>, ServiceError> {
        let f = match File::open(self.dir.join(DENIALS_FILE)) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line?;
            // Denials are advisory; a torn line is skipped.
            if let Ok(d) = serde_json::from_str::<Denial>(&line) {
                if d.after_seq >= from_seq {
                    out.push(d);
                }
            }
        }
        Ok(out)
    }

    pub fn put_blob(&self, bytes: &[u8]) -> Result<ContentDigest, EngineError> {
        self.blobs.put(bytes).map_err(|e| EngineError::Storage(e.to_string()))
    }

    pub fn blob(&self, digest: &ContentDigest) -> Result<Vec<u8>, EngineError> {
        self.blobs.get(digest).map_err(|e| EngineError::Storage(e.to_string()))
    }
}

impl CommandSink for &Service {
    fn state(&self) -> Arc<Engine> {
        self.view().1
    }

    fn submit(&mut self, actor: UserId, cmd: Command) -> Result<Outcome, EngineError> {
        Service::submit(self, actor, cmd).map(|r| r.result).map_err(|r| r.error)
    }

    fn put_blob(&mut self, bytes: &[u8]) -> Result<ContentDigest, EngineError> {
        Service::put_blob(self, bytes)
    }
}

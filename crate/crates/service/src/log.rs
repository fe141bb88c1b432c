//! Append-only session logs: one JSON record per line, one file per session.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Config,
    Turn,
    Ticket,
    Survey,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub v: u32,
    /// Dense per session, starting at 0.
    pub seq: u64,
    pub session: String,
    pub kind: RecordKind,
    pub ts: u64,
    pub payload: Value,
}

impl LogRecord {
    pub fn new(seq: u64, session: &str, kind: RecordKind, ts: u64, payload: &impl Serialize) -> Self {
        Self {
            v: LOG_VERSION,
            seq,
            session: session.to_string(),
            kind,
            ts,
            payload: serde_json::to_value(payload).expect("log payloads serialize"),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }

    pub fn payload_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T, serde_json::Error> {
        T::deserialize(&self.payload)
    }
}

/// Where a session's records go: a file, or memory for dry runs.
#[derive(Debug)]
pub enum LogSink {
    File { path: PathBuf, file: File },
    Memory(Vec<String>),
}

impl LogSink {
    pub fn create(dir: &Path, session: &str) -> Result<Self, LogError> {
        let path = session_path(dir, session);
        let io = |source| LogError::Io { path: path.clone(), source };
        fs::create_dir_all(dir).map_err(io)?;
        let file = OpenOptions::new().create_new(true).append(true).open(&path).map_err(io)?;
        Ok(LogSink::File { path, file })
    }

    pub fn reopen(path: &Path) -> Result<Self, LogError> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|source| LogError::Io { path: path.to_path_buf(), source })?;
        Ok(LogSink::File { path: path.to_path_buf(), file })
    }

    /// Writes the record as one line; a record is either fully written or
    /// shows up as a truncated tail on the next load.
    pub fn append(&mut self, record: &LogRecord) -> Result<(), LogError> {
        let mut line = record.to_line();
        match self {
            LogSink::File { path, file } => {
                line.push('\n');
                file.write_all(line.as_bytes()).map_err(|source| LogError::Io { path: path.clone(), source })
            }
            LogSink::Memory(lines) => {
                lines.push(line);
                Ok(())
            }
        }
    }

    pub fn lines(&self) -> Option<&[String]> {
        match self {
            LogSink::Memory(lines) => Some(lines),
            LogSink::File { .. } => None,
        }
    }
}

pub fn session_path(dir: &Path, session: &str) -> PathBuf {
    dir.join(format!("{session}.jsonl"))
}

#[derive(Debug)]
pub struct LoadedLog {
    pub records: Vec<LogRecord>,
    /// The original text of each kept record, without the newline.
    pub lines: Vec<String>,
    pub warnings: Vec<String>,
}

/// Parses a log. A damaged final line is dropped with a warning; damage
/// anywhere else is an error. Sequence numbers must be dense.
pub fn parse_log(path: &Path, text: &str) -> Result<LoadedLog, LogError> {
    let mut out = LoadedLog { records: Vec::new(), lines: Vec::new(), warnings: Vec::new() };
    let chunks: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, chunk) in chunks.iter().enumerate() {
        let last = i + 1 == chunks.len();
        let complete = chunk.ends_with('\n');
        let body = chunk.trim_end_matches('\n');
        if body.trim().is_empty() && complete {
            continue;
        }
        let parsed = serde_json::from_str::<LogRecord>(body).map_err(|e| e.to_string()).and_then(|r| {
            if r.v != LOG_VERSION {
                Err(format!("unsupported record version {}", r.v))
            } else if r.seq != out.records.len() as u64 {
                Err(format!("sequence gap: expected {}, found {}", out.records.len(), r.seq))
            } else if out.records.first().is_some_and(|f: &LogRecord| f.session != r.session) {
                Err(format!("record for session {} in log of {}", r.session, out.records[0].session))
            } else {
                Ok(r)
            }
        });
        match parsed {
            Ok(r) if complete || !last => {
                out.records.push(r);
                out.lines.push(body.to_string());
            }
            Ok(_) => out.warnings.push(format!("{}: final record lacks a newline; dropped", path.display())),
            Err(message) if last => {
                out.warnings.push(format!("{}:{}: truncated final record dropped ({message})", path.display(), i + 1))
            }
            Err(message) => return Err(LogError::Corrupt { path: path.to_path_buf(), line: i + 1, message }),
        }
    }
    Ok(out)
}

/// Loads a log file, rewriting it without a damaged tail if one was found.
pub fn load_log(path: &Path) -> Result<LoadedLog, LogError> {
    let io = |source| LogError::Io { path: path.to_path_buf(), source };
    let text = fs::read_to_string(path).map_err(io)?;
    let loaded = parse_log(path, &text)?;
    if !loaded.warnings.is_empty() {
        let mut clean = loaded.lines.join("\n");
        if !clean.is_empty() {
            clean.push('\n');
        }
        fs::write(path, clean).map_err(io)?;
    }
    Ok(loaded)
}

/// Session log files in `dir`, sorted by name.
pub fn log_files(dir: &Path) -> Result<Vec<PathBuf>, LogError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let io = |source| LogError::Io { path: dir.to_path_buf(), source };
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().is_some_and(|e| e == "jsonl") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

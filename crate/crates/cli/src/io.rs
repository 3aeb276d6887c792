//! JSON and JSON Lines file helpers shared by the commands and the service.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("cannot access {path}: {source}")]
    Fs {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(fs_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(fs_err(path))
}

/// Reads one record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let text = read_text(path)?;
    parse_jsonl(path, &text, false)
}

/// Like [`read_jsonl`], but a missing file is empty and a final line without
/// its newline (a write cut short) is ignored.
pub fn replay_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    match std::fs::read_to_string(path) {
        Ok(text) => parse_jsonl(path, &text, true),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(fs_err(path)(e)),
    }
}

fn parse_jsonl<T: DeserializeOwned>(path: &Path, text: &str, tolerate_torn_tail: bool) -> Result<Vec<T>, IoError> {
    let torn = tolerate_torn_tail && !text.is_empty() && !text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if torn && i + 1 == lines.len() => break,
            Err(e) => {
                return Err(IoError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), IoError> {
    let file = File::create(path).map_err(fs_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).expect("serializable");
        w.write_all(b"\n").map_err(fs_err(path))?;
    }
    w.flush().map_err(fs_err(path))
}

/// An append-only JSON Lines log; each record is flushed to disk before
/// `append` returns.
#[derive(Debug)]
pub struct AppendLog {
    path: PathBuf,
    file: File,
}

impl AppendLog {
    pub fn open(path: &Path) -> Result<Self, IoError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(fs_err(path))?;
        // Cut a torn tail so the next record starts on its own line.
        let bytes = std::fs::read(path).map_err(fs_err(path))?;
        if bytes.last().is_some_and(|&b| b != b'\n') {
            let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            file.set_len(keep as u64).map_err(fs_err(path))?;
        }
        Ok(AppendLog {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<(), IoError> {
        let mut line = serde_json::to_vec(record).expect("serializable");
        line.push(b'\n');
        self.file.write_all(&line).map_err(fs_err(&self.path))?;
        self.file.sync_data().map_err(fs_err(&self.path))
    }
}

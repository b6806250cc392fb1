use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use super::EngagementEvent;

/// Append-only per-thread event logs.
pub trait EventStore: Send {
    fn append(&mut self, thread_key: &str, event: &EngagementEvent) -> io::Result<()>;
    /// Every log, keyed by thread. Events are in append order.
    fn load_all(&mut self) -> io::Result<BTreeMap<String, Vec<EngagementEvent>>>;
}

#[derive(Debug, Default, Clone)]
pub struct MemoryStore {
    pub logs: BTreeMap<String, Vec<EngagementEvent>>,
}

impl EventStore for MemoryStore {
    fn append(&mut self, thread_key: &str, event: &EngagementEvent) -> io::Result<()> {
        self.logs.entry(thread_key.to_string()).or_default().push(event.clone());
        Ok(())
    }

    fn load_all(&mut self) -> io::Result<BTreeMap<String, Vec<EngagementEvent>>> {
        Ok(self.logs.clone())
    }
}

/// One `<key>.jsonl` file per thread under `dir`. Each event is written as a
/// single line with one `write` call; on load a trailing line without its
/// newline is taken as a torn write and cut off.
#[derive(Debug, Clone)]
pub struct FileStore {
    dir: PathBuf,
    fsync: bool,
}

impl FileStore {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(FileStore { dir, fsync: false })
    }

    /// Flush every append to disk before returning.
    pub fn with_fsync(mut self, fsync: bool) -> Self {
        self.fsync = fsync;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, thread_key: &str) -> PathBuf {
        self.dir.join(format!("{}.jsonl", encode_key(thread_key)))
    }

    /// Reads one log, discarding (and truncating away) a torn final line.
    pub fn read_log(path: &Path) -> io::Result<Vec<EngagementEvent>> {
        let raw = fs::read(path)?;
        let complete = match raw.iter().rposition(|b| *b == b'\n') {
            Some(i) => i + 1,
            None => 0,
        };
        if complete < raw.len() {
            tracing::warn!(path = %path.display(), dropped = raw.len() - complete, "discarding torn log line");
            OpenOptions::new().write(true).open(path)?.set_len(complete as u64)?;
        }
        let text = std::str::from_utf8(&raw[..complete])
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, line)| {
                serde_json::from_str(line).map_err(|e| {
                    io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("{} line {}: {e}", path.display(), i + 1),
                    )
                })
            })
            .collect()
    }
}

impl EventStore for FileStore {
    fn append(&mut self, thread_key: &str, event: &EngagementEvent) -> io::Result<()> {
        let mut line = event.to_json_line();
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path_for(thread_key))?;
        f.write_all(line.as_bytes())?;
        if self.fsync {
            f.sync_data()?;
        }
        Ok(())
    }

    fn load_all(&mut self) -> io::Result<BTreeMap<String, Vec<EngagementEvent>>> {
        let mut out = BTreeMap::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let Some(key) = path.file_stem().and_then(|s| s.to_str()).and_then(decode_key) else {
                continue;
            };
            out.insert(key, Self::read_log(&path)?);
        }
        Ok(out)
    }
}

/// File-name-safe form of a thread key: unusual bytes become `%XX`.
pub(crate) fn encode_key(key: &str) -> String {
    let mut out = String::with_capacity(key.len());
    for b in key.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'@' | b'.' | b'-' | b'_' | b'+') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

pub(crate) fn decode_key(name: &str) -> Option<String> {
    let bytes = name.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = name.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

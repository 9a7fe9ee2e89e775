//! Append-only JSON-lines files.
//!
//! A record is committed once its full line, newline included, has been
//! written. On open, a trailing fragment without a newline is the remains of
//! an interrupted append: it is dropped and the file truncated so later
//! appends start on a clean line.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::StoreError;

pub(crate) struct AppendLog {
    path: PathBuf,
    file: File,
    sync: bool,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl AppendLog {
    /// Opens or creates the log and returns its committed records.
    pub fn open<T: DeserializeOwned>(path: &Path, sync: bool) -> Result<(Self, Vec<T>), StoreError> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(io_err(path))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io_err(path))?;
        let committed = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if committed < bytes.len() {
            tracing::warn!(
                path = %path.display(),
                bytes = bytes.len() - committed,
                "dropping interrupted record"
            );
            file.set_len(committed as u64).map_err(io_err(path))?;
            file.seek(SeekFrom::End(0)).map_err(io_err(path))?;
        }
        let mut records = Vec::new();
        for (i, line) in bytes[..committed].split(|&b| b == b'\n').enumerate() {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let record = serde_json::from_slice(line).map_err(|e| StoreError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(record);
        }
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                sync,
            },
            records,
        ))
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(record).expect("records serialize");
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        if self.sync {
            self.file.sync_data().map_err(io_err(&self.path))?;
        }
        Ok(())
    }

    /// Replaces the whole log with `records` through a temporary file and
    /// an atomic rename.
    pub fn rewrite<T: Serialize>(&mut self, records: &[T]) -> Result<(), StoreError> {
        let tmp = self.path.with_extension("compact");
        {
            let mut out = File::create(&tmp).map_err(io_err(&tmp))?;
            let mut buf = Vec::new();
            for r in records {
                serde_json::to_writer(&mut buf, r).expect("records serialize");
                buf.push(b'\n');
            }
            out.write_all(&buf).map_err(io_err(&tmp))?;
            out.sync_all().map_err(io_err(&tmp))?;
        }
        std::fs::rename(&tmp, &self.path).map_err(io_err(&self.path))?;
        sync_dir(self.path.parent());
        self.file = OpenOptions::new()
            .read(true)
            .append(true)
            .open(&self.path)
            .map_err(io_err(&self.path))?;
        Ok(())
    }
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename, so
/// readers see either the old or the new content.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(io_err(path))?;
    sync_dir(path.parent());
    Ok(())
}

fn sync_dir(dir: Option<&Path>) {
    // Directory fsync is best effort; not every platform supports it.
    if let Some(Ok(d)) = dir.map(File::open) {
        let _ = d.sync_all();
    }
}

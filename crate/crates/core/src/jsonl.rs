//! Append-only JSONL files shared by the response cache and the run store.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: corrupt entry: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
}

/// Reads every entry of an append-only JSONL file, creating it if absent.
///
/// A final line without a terminating newline that fails to parse is the
/// remnant of an interrupted append; it is cut from the file. A corrupt
/// line anywhere else is an error.
pub fn read_entries<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let io_err = |source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = OpenOptions::new()
        .read(true)
        .write(true)
        .create(true)
        .truncate(false)
        .open(path)
        .map_err(io_err)?;

    let mut reader = BufReader::new(&mut file);
    let mut entries = Vec::new();
    let mut offset = 0u64;
    let mut line_no = 0usize;
    let mut buf = Vec::new();
    let mut torn_at = None;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(io_err)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with(b"\n");
        let text = String::from_utf8_lossy(&buf);
        if !text.trim().is_empty() {
            match serde_json::from_str::<T>(text.trim_end()) {
                Ok(v) => entries.push(v),
                Err(_) if !complete => {
                    torn_at = Some(offset);
                    break;
                }
                Err(e) => {
                    return Err(JsonlError::Corrupt {
                        path: path.display().to_string(),
                        line: line_no,
                        message: e.to_string(),
                    })
                }
            }
        }
        offset += n as u64;
        if !complete {
            // Parsed fine but lacks a newline; terminate it so later
            // appends start on a fresh line.
            file_append_newline(path)?;
            break;
        }
    }
    drop(reader);
    if let Some(at) = torn_at {
        log::warn!("{}: dropping torn final line at byte {at}", path.display());
        file.set_len(at).map_err(io_err)?;
        file.seek(SeekFrom::End(0)).map_err(io_err)?;
    }
    Ok(entries)
}

fn file_append_newline(path: &Path) -> Result<(), JsonlError> {
    let mut f = OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|source| JsonlError::Io {
            path: path.display().to_string(),
            source,
        })?;
    f.write_all(b"\n").map_err(|source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Opens `path` for appending.
pub fn open_append(path: &Path) -> Result<File, JsonlError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|source| JsonlError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Serializes `value` as one line and flushes it.
pub fn append_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> io::Result<()> {
    let mut line = serde_json::to_vec(value).map_err(io::Error::other)?;
    line.push(b'\n');
    w.write_all(&line)?;
    w.flush()
}

//! Append-only newline-delimited logs with a checksum per line.
//!
//! Each line is `<crc32 of the JSON, 8 lowercase hex digits> <JSON>\n`.
//! On open, a torn tail (an incomplete or unverifiable suffix left by a crash
//! mid-write) is truncated away. A bad line followed by good ones is treated
//! as corruption and reported instead of repaired.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Result, ServiceError};

pub fn encode_line<T: Serialize>(record: &T) -> Result<String> {
    let json = serde_json::to_string(record)?;
    Ok(format!("{:08x} {json}\n", crc32fast::hash(json.as_bytes())))
}

/// Parses one line without its trailing newline.
pub fn decode_line<T: DeserializeOwned>(line: &str) -> Option<T> {
    let (crc, json) = line.split_once(' ')?;
    if crc.len() != 8 {
        return None;
    }
    let crc = u32::from_str_radix(crc, 16).ok()?;
    if crc32fast::hash(json.as_bytes()) != crc {
        return None;
    }
    serde_json::from_str(json).ok()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Recovery {
    pub records: usize,
    pub truncated_bytes: u64,
}

/// Reads all valid records and the byte length of the valid prefix.
pub fn read_log<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, u64, Recovery)> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes)?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(e.into()),
    }
    let mut records = Vec::new();
    let mut offset = 0usize;
    let mut lineno = 0usize;
    while offset < bytes.len() {
        lineno += 1;
        let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            break;
        };
        let decoded = std::str::from_utf8(&bytes[offset..offset + nl])
            .ok()
            .and_then(decode_line::<T>);
        match decoded {
            Some(r) => {
                records.push(r);
                offset += nl + 1;
            }
            None => {
                if has_valid_line_after::<T>(&bytes[offset + nl + 1..]) {
                    return Err(ServiceError::Corrupt {
                        path: path.display().to_string(),
                        line: lineno,
                    });
                }
                break;
            }
        }
    }
    let recovery = Recovery {
        records: records.len(),
        truncated_bytes: (bytes.len() - offset) as u64,
    };
    Ok((records, offset as u64, recovery))
}

fn has_valid_line_after<T: DeserializeOwned>(rest: &[u8]) -> bool {
    rest.split(|&b| b == b'\n')
        .filter_map(|l| std::str::from_utf8(l).ok())
        .any(|l| decode_line::<T>(l).is_some())
}

/// Writer over one log file. Every append is flushed to the OS before
/// returning.
#[derive(Debug)]
pub struct LogWriter<T> {
    path: PathBuf,
    out: BufWriter<File>,
    _record: PhantomData<fn(&T)>,
}

impl<T: Serialize + DeserializeOwned> LogWriter<T> {
    /// Opens `path`, truncating a torn tail, and returns the existing records.
    pub fn open(path: &Path) -> Result<(Self, Vec<T>, Recovery)> {
        let (records, valid_len, recovery) = read_log(path)?;
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .truncate(false)
            .open(path)?;
        if recovery.truncated_bytes > 0 {
            log::warn!(
                "{}: dropping {} bytes of torn tail",
                path.display(),
                recovery.truncated_bytes
            );
            file.set_len(valid_len)?;
            file.sync_data()?;
        }
        let mut file = file;
        std::io::Seek::seek(&mut file, std::io::SeekFrom::Start(valid_len))?;
        Ok((
            Self {
                path: path.to_path_buf(),
                out: BufWriter::new(file),
                _record: PhantomData,
            },
            records,
            recovery,
        ))
    }

    pub fn append(&mut self, record: &T) -> Result<()> {
        self.out.write_all(encode_line(record)?.as_bytes())?;
        self.out.flush()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

//! Atomic file writes, schema-checked reads and content fingerprints.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Key under which artifacts keep wall-clock measurements.
pub const TIMING_KEY: &str = "timing";
/// Bench CSV columns that carry wall-clock measurements.
pub const TIMING_COLUMNS: [&str; 2] = ["strategy_seconds", "speedup"];

/// Writes to a sibling temp file, syncs it, then renames over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingFile(path.to_path_buf())),
        Err(e) => Err(e.into()),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_bytes(path)?).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Parses `path` as `T`, reporting decode failures as schema errors.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| schema_error(path, e))
}

pub fn schema_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Loads with a custom parser and maps any failure other than a missing
/// file to a schema error naming the file.
pub fn read_with<T>(path: &Path, parse: impl FnOnce(&str) -> Result<T>) -> Result<T> {
    let text = read_text(path)?;
    parse(&text).map_err(|e| match e {
        Error::MissingFile(_) => e,
        other => schema_error(path, other),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

/// Artifact content with wall-clock fields removed: JSON drops every
/// `timing` object and CSV drops the timing columns. Anything else is
/// returned unchanged.
pub fn canonical_bytes(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "json" => {
            let mut v: Value = serde_json::from_slice(bytes).map_err(|e| schema_error(path, e))?;
            strip_timing(&mut v);
            Ok(serde_json::to_vec(&v)?)
        }
        "csv" => {
            let text = std::str::from_utf8(bytes).map_err(|e| schema_error(path, e))?;
            let mut lines = text.lines();
            let Some(header) = lines.next() else {
                return Ok(Vec::new());
            };
            let keep: Vec<bool> = header.split(',').map(|c| !TIMING_COLUMNS.contains(&c)).collect();
            let mut out = String::new();
            for line in std::iter::once(header).chain(lines) {
                let cells: Vec<&str> = line
                    .split(',')
                    .zip(&keep)
                    .filter(|(_, k)| **k)
                    .map(|(c, _)| c)
                    .collect();
                out.push_str(&cells.join(","));
                out.push('\n');
            }
            Ok(out.into_bytes())
        }
        _ => Ok(bytes.to_vec()),
    }
}

fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove(TIMING_KEY);
            for child in map.values_mut() {
                strip_timing(child);
            }
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

/// Fingerprint of an artifact with timing fields excluded.
pub fn canonical_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&canonical_bytes(path, &read_bytes(path)?)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        atomic_write(&p, b"{\"x\":1}").unwrap();
        atomic_write(&p, b"{\"x\":2}").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"{\"x\":2}");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn missing_file_is_reported() {
        let err = read_bytes(Path::new("/nonexistent/file.json")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }

    #[test]
    fn timing_is_stripped() {
        let a = canonical_bytes(Path::new("x.json"), br#"{"b":1,"timing":{"s":0.5}}"#).unwrap();
        let b = canonical_bytes(Path::new("x.json"), br#"{"b":1,"timing":{"s":0.7}}"#).unwrap();
        assert_eq!(a, b);
        let c = canonical_bytes(
            Path::new("bench.csv"),
            b"method,b,accuracy,acc_drop,strategy_seconds,speedup\nlop,0.3,0.9,0.01,0.001,500\n",
        )
        .unwrap();
        assert_eq!(c, b"method,b,accuracy,acc_drop\nlop,0.3,0.9,0.01\n");
    }

    #[test]
    fn digest_is_hex_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}

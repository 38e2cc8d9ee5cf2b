//! Line-delimited JSON helpers shared by the corpus, cache and trace files.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::ser::Error as _;
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Parses every non-blank line of `path`, keeping 1-based line numbers.
pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

/// One compact JSON record per line, newline-terminated.
pub fn render<T: Serialize>(records: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Writes through a sibling temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(Error::io(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(Error::io(path))?))
}

/// Shortest round-trip decimal, padded to at least six fractional digits.
pub fn format_coord(x: f64) -> String {
    let mut s = format!("{x}");
    let frac = match s.find('.') {
        Some(dot) => s.len() - dot - 1,
        None => {
            s.push('.');
            0
        }
    };
    for _ in frac..6 {
        s.push('0');
    }
    s
}

fn raw<E: serde::ser::Error>(x: f64) -> Result<Box<RawValue>, E> {
    if !x.is_finite() {
        return Err(E::custom("non-finite coordinate"));
    }
    RawValue::from_string(format_coord(x)).map_err(E::custom)
}

pub fn ser_coord<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    raw::<S::Error>(*x)?.serialize(s)
}

pub fn ser_opt_coord<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => ser_coord(v, s),
        None => s.serialize_none(),
    }
}

pub fn ser_coords<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
    xs.iter()
        .map(|&x| raw::<S::Error>(x))
        .collect::<Result<Vec<_>, _>>()
        .map_err(S::Error::custom)?
        .serialize(s)
}

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use rsmdp_core::format::sig;
use serde_json::Value;
use tempfile::NamedTempFile;

/// Where a command's single artifact goes: a named file under the output
/// directory, or stdout.
pub struct Sink {
    dir: Option<PathBuf>,
}

impl Sink {
    pub fn new(dir: Option<PathBuf>) -> io::Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
        }
        Ok(Self { dir })
    }

    /// Writes `bytes` to `<dir>/<name>` through a temporary file in the same
    /// directory followed by a rename, so readers never see a partial file.
    pub fn emit(&self, name: &str, bytes: &[u8]) -> io::Result<Option<PathBuf>> {
        match &self.dir {
            None => {
                let mut out = io::stdout().lock();
                out.write_all(bytes)?;
                out.flush()?;
                Ok(None)
            }
            Some(dir) => {
                let target = dir.join(name);
                let mut tmp = NamedTempFile::new_in(dir)?;
                tmp.write_all(bytes)?;
                tmp.as_file().sync_all()?;
                tmp.persist(&target).map_err(|e| e.error)?;
                Ok(Some(target))
            }
        }
    }

    pub fn json(&self, name: &str, value: Value) -> io::Result<Option<PathBuf>> {
        let mut text =
            serde_json::to_string_pretty(&round_floats(value)).map_err(io::Error::other)?;
        text.push('\n');
        self.emit(name, text.as_bytes())
    }
}

/// Every float in `value` cut to the emitted significant digits.
pub fn round_floats(value: Value) -> Value {
    match value {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or_default();
            let rounded: f64 = sig(x).parse().unwrap_or(x);
            serde_json::Number::from_f64(rounded).map_or(Value::Null, Value::Number)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(round_floats).collect()),
        Value::Object(map) => {
            Value::Object(map.into_iter().map(|(k, v)| (k, round_floats(v))).collect())
        }
        other => other,
    }
}

pub fn csv_bytes(
    write: impl FnOnce(&mut Vec<u8>) -> rsmdp_core::error::Result<()>,
) -> rsmdp_core::error::Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

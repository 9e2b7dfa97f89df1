//! File helpers shared by every reader and writer: commented metadata
//! headers, atomic replacement, and CSV reader construction.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_NAME: &str = "orchardcast";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Ordered `# key=value` lines written at the top of every output CSV.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metadata {
    entries: Vec<(String, String)>,
}

impl Metadata {
    /// Starts a header carrying the tool name and version.
    pub fn tool() -> Self {
        let mut m = Metadata::default();
        m.set("tool", TOOL_NAME);
        m.set("version", TOOL_VERSION);
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.set(key, value);
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str("# ");
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// Parses the leading `# key=value` block of a text file.
    pub fn parse(text: &str) -> Self {
        let mut m = Metadata::default();
        for line in text.lines() {
            let Some(rest) = line.strip_prefix('#') else {
                break;
            };
            if let Some((k, v)) = rest.trim_start().split_once('=') {
                m.set(k.trim(), v.trim());
            }
        }
        m
    }
}

/// Hex SHA-256 of `bytes`, truncated to 16 characters.
pub fn digest(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Writes `bytes` to `path` by way of a sibling temp file and a rename, so a
/// failed run never leaves a truncated output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::config(format!("output path {} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp: PathBuf = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Renders a header plus CSV records into a string.
pub fn render_csv<I, R>(meta: &Metadata, header: &[&str], records: I) -> Result<String>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
    wtr.write_record(header).map_err(|e| csv_err("<memory>", e))?;
    for r in records {
        wtr.write_record(r).map_err(|e| csv_err("<memory>", e))?;
    }
    let body = wtr
        .into_inner()
        .map_err(|e| Error::numerical(format!("csv buffer: {e}")))?;
    let mut out = meta.render();
    out.push_str(&String::from_utf8_lossy(&body));
    Ok(out)
}

pub fn write_csv<I, R>(path: &Path, meta: &Metadata, header: &[&str], records: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let text = render_csv(meta, header, records)?;
    write_atomic(path, text.as_bytes())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// A CSV reader over `text` that skips `#` comment lines.
pub fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

pub fn csv_err(path: impl Into<PathBuf>, source: csv::Error) -> Error {
    Error::Csv {
        path: path.into(),
        source,
    }
}

/// Checks that `found` starts with the `expected` column names.
pub fn expect_header(location: &str, found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    for (i, want) in expected.iter().enumerate() {
        match found.get(i) {
            Some(got) if got == *want => {}
            Some(got) => {
                return Err(Error::schema(
                    location,
                    format!("column {} should be `{want}`, found `{got}`", i + 1),
                ))
            }
            None => {
                return Err(Error::schema(location, format!("missing column `{want}`")));
            }
        }
    }
    Ok(())
}

pub(crate) fn parse_f64(location: &str, column: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>()
        .map_err(|_| Error::schema(location, format!("column `{column}`: `{raw}` is not a number")))
}

pub(crate) fn parse_i32(location: &str, column: &str, raw: &str) -> Result<i32> {
    raw.parse::<i32>()
        .map_err(|_| Error::schema(location, format!("column `{column}`: `{raw}` is not an integer")))
}

/// Formats a float so that parsing it back yields the same bits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        format!("{v:?}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metadata_roundtrip() {
        let m = Metadata::tool().with("seed", 42).with("config_digest", "abc");
        let text = format!("{}a,b\n1,2\n", m.render());
        assert_eq!(Metadata::parse(&text), m);
        assert_eq!(Metadata::parse(&text).get("seed"), Some("42"));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn float_format_roundtrips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-12, 12345.678] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(fmt_f64(f64::NAN), "NA");
    }
}

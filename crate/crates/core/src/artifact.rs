//! Versioned model container: a short text header followed by a bincode body.
//!
//! ```text
//! ORCHARDCAST-ENSEMBLE
//! format_version=1
//! tool_version=0.1.0
//! seed=42
//! config_digest=…
//! body_digest=…
//! columns=bloom_precip,…
//! ---
//! <bincode StackEnsemble>
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{self, TOOL_VERSION};
use crate::stack::StackEnsemble;

pub const MAGIC: &str = "ORCHARDCAST-ENSEMBLE";
pub const FORMAT_VERSION: u32 = 1;
const SEPARATOR: &str = "---\n";

/// Digest of the ensemble's stack configuration.
pub fn config_digest(ens: &StackEnsemble) -> String {
    io::digest(toml::to_string(&ens.config).unwrap_or_default().as_bytes())
}

pub fn encode(ens: &StackEnsemble) -> Result<Vec<u8>> {
    let body = bincode::serialize(ens).map_err(|e| Error::numerical(format!("serializing ensemble: {e}")))?;
    let header = format!(
        "{MAGIC}\nformat_version={FORMAT_VERSION}\ntool_version={TOOL_VERSION}\nseed={}\nconfig_digest={}\nbody_digest={}\ncolumns={}\n{SEPARATOR}",
        ens.config.seed,
        config_digest(ens),
        io::digest(&body),
        ens.column_names.join(","),
    );
    let mut out = header.into_bytes();
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn decode(bytes: &[u8], location: &str) -> Result<StackEnsemble> {
    let sep = format!("\n{SEPARATOR}");
    let split = bytes
        .windows(sep.len())
        .position(|w| w == sep.as_bytes())
        .ok_or_else(|| Error::schema(location, "missing header terminator; not an ensemble artifact"))?;
    let header = std::str::from_utf8(&bytes[..split])
        .map_err(|_| Error::schema(location, "header is not UTF-8"))?;
    let body = &bytes[split + sep.len()..];
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::schema(location, "not an ensemble artifact"));
    }
    let fields: Vec<(&str, &str)> = lines.filter_map(|l| l.split_once('=')).collect();
    let get = |k: &str| fields.iter().find(|(key, _)| *key == k).map(|(_, v)| *v);
    let version = get("format_version").ok_or_else(|| Error::schema(location, "missing format_version"))?;
    if version != FORMAT_VERSION.to_string() {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION.to_string(),
            found: version.to_string(),
        });
    }
    if let Some(d) = get("body_digest") {
        if d != io::digest(body) {
            return Err(Error::validation(location, "body digest mismatch; artifact is corrupt"));
        }
    }
    bincode::deserialize(body).map_err(|e| Error::schema(location, format!("decoding ensemble: {e}")))
}

pub fn save(path: &Path, ens: &StackEnsemble) -> Result<()> {
    io::write_atomic(path, &encode(ens)?)
}

pub fn load(path: &Path) -> Result<StackEnsemble> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

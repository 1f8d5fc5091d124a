use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version written into every checkpoint header.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    payload: T,
}

/// Writes `payload` as JSON behind a `format`/`version` header. The file is
/// written to a sibling temporary path first and renamed into place.
pub fn save_versioned<T: Serialize>(path: impl AsRef<Path>, format: &str, payload: &T) -> Result<()> {
    let path = path.as_ref();
    let envelope = Envelope { format: format.to_string(), version: CHECKPOINT_VERSION, payload };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec(&envelope)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a file written by [`save_versioned`], checking the header.
pub fn load_versioned<T: DeserializeOwned>(path: impl AsRef<Path>, format: &str) -> Result<T> {
    let bytes = fs::read(path)?;
    let header: Envelope<serde::de::IgnoredAny> = serde_json::from_slice(&bytes)?;
    if header.format != format {
        return Err(Error::Format(format!("expected a `{format}` file, found `{}`", header.format)));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported `{format}` version {} (this build reads {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    let envelope: Envelope<T> = serde_json::from_slice(&bytes)?;
    Ok(envelope.payload)
}

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Family, Model};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "monde-model";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Header line `monde-model <version> <sha256 of payload>` followed by the JSON payload.
pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let payload = serde_json::to_vec(model)?;
    let digest = hex(&Sha256::digest(&payload));
    let mut out = format!("{MAGIC} {FORMAT_VERSION} {digest}\n").into_bytes();
    out.extend(payload);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let split = bytes.iter().position(|&b| b == b'\n').ok_or(Error::ChecksumFailure)?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| Error::ChecksumFailure)?;
    let payload = &bytes[split + 1..];
    let mut fields = header.split(' ');
    if fields.next() != Some(MAGIC) {
        return Err(Error::ChecksumFailure);
    }
    let version: u32 = fields
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or(Error::ChecksumFailure)?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let digest = fields.next().ok_or(Error::ChecksumFailure)?;
    if fields.next().is_some() || digest != hex(&Sha256::digest(payload)) {
        return Err(Error::ChecksumFailure);
    }
    Ok(serde_json::from_slice(payload)?)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads a model and checks that it belongs to `family`.
pub fn load_model_as(path: impl AsRef<Path>, family: Family) -> Result<Model> {
    let model = load_model(path)?;
    if model.family() != family {
        return Err(Error::FamilyMismatch {
            expected: family.name().into(),
            found: model.family().name().into(),
        });
    }
    Ok(model)
}

//! Binary model container: magic, JSON header, raw little-endian `f64`
//! parameters. Parameters round-trip bit-for-bit.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DGSMODL1";

#[derive(Serialize, Deserialize)]
struct Envelope<H> {
    kind: String,
    header: H,
}

pub(crate) fn save<H: Serialize>(path: &Path, kind: &str, header: &H, params: &[f64]) -> Result<()> {
    let head = serde_json::to_vec(&Envelope {
        kind: kind.to_owned(),
        header,
    })?;
    let mut buf = Vec::with_capacity(8 + 4 + head.len() + 8 + params.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(head.len() as u32).to_le_bytes());
    buf.extend_from_slice(&head);
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub(crate) fn load<H: DeserializeOwned>(path: &Path, kind: &str) -> Result<(H, Vec<f64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_owned()),
            _ => Error::io(path, e),
        })?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let short = || Error::ModelFormat(format!("{} is truncated", path.display()));
    if bytes.get(..8) != Some(MAGIC.as_slice()) {
        return Err(Error::ModelFormat(format!(
            "{} is not a model file",
            path.display()
        )));
    }
    let head_len = u32::from_le_bytes(bytes.get(8..12).ok_or_else(short)?.try_into().unwrap()) as usize;
    let head = bytes.get(12..12 + head_len).ok_or_else(short)?;
    let env: Envelope<H> = serde_json::from_slice(head)?;
    if env.kind != kind {
        return Err(Error::ModelFormat(format!(
            "expected a {kind} model, found {}",
            env.kind
        )));
    }
    let at = 12 + head_len;
    let count = u64::from_le_bytes(bytes.get(at..at + 8).ok_or_else(short)?.try_into().unwrap()) as usize;
    let body = bytes.get(at + 8..at + 8 + count * 8).ok_or_else(short)?;
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((env.header, params))
}

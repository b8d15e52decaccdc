//! `magic | u64 LE manifest length | JSON manifest | blob`

use crate::error::{Error, Result};

pub(crate) fn encode(magic: &[u8; 8], manifest: &[u8], blob: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + manifest.len() + blob.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest);
    out.extend_from_slice(blob);
    out
}

/// Splits a container into manifest bytes and blob, returning the blob's file offset too.
pub(crate) fn decode<'a>(
    what: &'static str,
    magic: &[u8; 8],
    bytes: &'a [u8],
) -> Result<(&'a [u8], &'a [u8], u64)> {
    if bytes.len() < 16 {
        return Err(Error::format(
            what,
            bytes.len() as u64,
            "file shorter than header",
        ));
    }
    if &bytes[..8] != magic {
        return Err(Error::format(what, 0, "bad magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let end = 16u64
        .checked_add(len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| {
            Error::format(
                what,
                8,
                format!("manifest length {len} runs past end of file"),
            )
        })?;
    Ok((&bytes[16..end as usize], &bytes[end as usize..], end))
}

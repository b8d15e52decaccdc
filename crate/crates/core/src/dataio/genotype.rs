//! Genotype files: manifest `(T, shape)` then x_T, z_T, ..., z_1 as little-endian f32.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container;
use crate::error::{Error, Result};
use crate::sampler::Genotype;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DXOGENO\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    steps: usize,
    shape: Vec<usize>,
    blob_len: u64,
    blob_crc32: u32,
}

pub fn encode_genotype(g: &Genotype) -> Result<Vec<u8>> {
    let shape = g.x_t.shape().to_vec();
    let mut blob = Vec::with_capacity(g.x_t.len() * 4 * (g.steps() + 1));
    super::f32_to_le(g.x_t.data(), &mut blob);
    for z in &g.z {
        z.ensure_shape(&shape)?;
        super::f32_to_le(z.data(), &mut blob);
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        steps: g.steps(),
        shape,
        blob_len: blob.len() as u64,
        blob_crc32: crc32fast::hash(&blob),
    };
    Ok(container::encode(
        MAGIC,
        &serde_json::to_vec(&manifest)?,
        &blob,
    ))
}

/// `expect` optionally pins `(shape, T)`; a mismatch is a format error.
pub fn decode_genotype(bytes: &[u8], expect: Option<(&[usize], usize)>) -> Result<Genotype> {
    const WHAT: &str = "genotype";
    let (json, blob, blob_start) = container::decode(WHAT, MAGIC, bytes)?;
    let m: Manifest =
        serde_json::from_slice(json).map_err(|e| Error::format(WHAT, 16, e.to_string()))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::format(
            WHAT,
            16,
            format!("unsupported version {}", m.format_version),
        ));
    }
    if let Some((shape, steps)) = expect {
        if m.shape != shape || m.steps != steps {
            return Err(Error::format(
                WHAT,
                16,
                format!(
                    "holds T={} shape {:?}, expected T={steps} shape {shape:?}",
                    m.steps, m.shape
                ),
            ));
        }
    }
    let per = m.shape.iter().product::<usize>() * 4;
    let need = per * (m.steps + 1);
    if blob.len() != need || m.blob_len != need as u64 {
        return Err(Error::format(
            WHAT,
            blob_start + blob.len().min(need) as u64,
            format!("blob is {} bytes, expected {need}", blob.len()),
        ));
    }
    if crc32fast::hash(blob) != m.blob_crc32 {
        return Err(Error::format(WHAT, blob_start, "blob checksum mismatch"));
    }
    let mut chunks = blob
        .chunks_exact(per)
        .map(|c| Tensor::new(m.shape.clone(), super::le_to_f32(c)));
    let x_t = chunks.next().expect("at least one tensor")?;
    let z = chunks.collect::<Result<Vec<_>>>()?;
    Ok(Genotype { x_t, z })
}

pub fn save_genotype(g: &Genotype, path: impl AsRef<Path>) -> Result<()> {
    super::write_file(path.as_ref(), &encode_genotype(g)?)
}

pub fn load_genotype(
    path: impl AsRef<Path>,
    expect: Option<(&[usize], usize)>,
) -> Result<Genotype> {
    decode_genotype(&super::read_file(path.as_ref())?, expect)
}

//! File formats: MNIST IDX input, checkpoints, genotypes, PNG export and run logs.

pub mod checkpoint;
mod container;
pub mod genotype;
pub mod idx;
pub mod image;
pub mod runlog;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use genotype::{load_genotype, save_genotype};
pub use idx::{load_idx, ImageDataset, SourceMeta};
pub use image::{encode_png, export_png, to_u8_pixels};
pub use runlog::{RunEvent, RunLog};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes via a temporary sibling and a rename so readers never see half a file.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn f32_to_le(values: &[f32], out: &mut Vec<u8>) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn le_to_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

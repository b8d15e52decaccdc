//! MNIST IDX files: big-endian headers, magic 0x00000803 (images) and 0x00000801 (labels).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceMeta {
    pub total: usize,
    pub kept: usize,
    pub original_height: usize,
    pub original_width: usize,
}

#[derive(Clone, Debug)]
pub struct ImageDataset {
    /// `[1, H, W]` tensors in [-1, 1].
    pub images: Vec<Tensor>,
    pub label_filter: u8,
    pub source_meta: SourceMeta,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Per-pixel mean and standard deviation over the whole set.
    pub fn pixel_stats(&self) -> (f64, f64) {
        pixel_stats(&self.images)
    }
}

pub fn pixel_stats(images: &[Tensor]) -> (f64, f64) {
    let n: usize = images.iter().map(|t| t.len()).sum();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = images
        .iter()
        .flat_map(|t| t.data())
        .map(|&v| f64::from(v))
        .sum::<f64>()
        / n as f64;
    let var = images
        .iter()
        .flat_map(|t| t.data())
        .map(|&v| (f64::from(v) - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    (mean, var.sqrt())
}

fn be_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::format(
                what,
                bytes.len() as u64,
                format!("truncated header, needed 4 bytes at {at}"),
            )
        })
}

/// `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    const WHAT: &str = "IDX images";
    let magic = be_u32(bytes, 0, WHAT)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(
            WHAT,
            0,
            format!("magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        ));
    }
    let n = be_u32(bytes, 4, WHAT)? as usize;
    let rows = be_u32(bytes, 8, WHAT)? as usize;
    let cols = be_u32(bytes, 12, WHAT)? as usize;
    let need = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::format(WHAT, 4, "dimensions overflow"))?;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::format(
            WHAT,
            bytes.len() as u64,
            format!(
                "truncated: {} pixel bytes, header promises {need}",
                body.len()
            ),
        ));
    }
    Ok((n, rows, cols, &body[..need]))
}

pub fn parse_labels(bytes: &[u8]) -> Result<&[u8]> {
    const WHAT: &str = "IDX labels";
    let magic = be_u32(bytes, 0, WHAT)?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(
            WHAT,
            0,
            format!("magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        ));
    }
    let n = be_u32(bytes, 4, WHAT)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::format(
            WHAT,
            bytes.len() as u64,
            format!("truncated: {} labels, header promises {n}", body.len()),
        ));
    }
    Ok(&body[..n])
}

pub fn encode_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Rescales 0..=255 to [-1, 1] and pads with -1 (black) to `target`, centered.
pub fn to_tensor(
    pixels: &[u8],
    rows: usize,
    cols: usize,
    target: (usize, usize),
) -> Result<Tensor> {
    let (th, tw) = target;
    if th < rows || tw < cols {
        return Err(Error::Argument(format!(
            "target {th}x{tw} is smaller than source {rows}x{cols}"
        )));
    }
    let (top, left) = ((th - rows) / 2, (tw - cols) / 2);
    let mut data = vec![-1.0f32; th * tw];
    for r in 0..rows {
        for c in 0..cols {
            data[(top + r) * tw + left + c] = f32::from(pixels[r * cols + c]) / 127.5 - 1.0;
        }
    }
    Tensor::new(vec![1, th, tw], data)
}

pub fn decode_dataset(
    image_bytes: &[u8],
    label_bytes: &[u8],
    keep_label: u8,
    target: (usize, usize),
) -> Result<ImageDataset> {
    let (n, rows, cols, pixels) = parse_images(image_bytes)?;
    let labels = parse_labels(label_bytes)?;
    if labels.len() != n {
        return Err(Error::format(
            "IDX labels",
            4,
            format!("{} labels for {n} images", labels.len()),
        ));
    }
    if keep_label > 9 {
        log::warn!("label {keep_label} is outside 0-9; the dataset will be empty");
    }
    let images = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == keep_label)
        .map(|(i, _)| {
            to_tensor(
                &pixels[i * rows * cols..(i + 1) * rows * cols],
                rows,
                cols,
                target,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImageDataset {
        source_meta: SourceMeta {
            total: n,
            kept: images.len(),
            original_height: rows,
            original_width: cols,
        },
        images,
        label_filter: keep_label,
    })
}

pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    keep_label: u8,
    target: (usize, usize),
) -> Result<ImageDataset> {
    let images = super::read_file(images_path.as_ref())?;
    let labels = super::read_file(labels_path.as_ref())?;
    decode_dataset(&images, &labels, keep_label, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_is_centered() {
        let t = to_tensor(&[255, 0, 0, 255], 2, 2, (4, 4)).unwrap();
        let d = t.data();
        assert_eq!(d[0], -1.0);
        assert_eq!(d[5], 1.0);
        assert_eq!(d[6], -1.0);
        assert_eq!(d[10], 1.0);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut img = encode_images(2, 2, &[1, 2, 3, 4]);
        img[3] = 0x01;
        assert!(matches!(
            parse_images(&img),
            Err(Error::Format { offset: 0, .. })
        ));
        let img = encode_images(2, 2, &[1, 2, 3, 4]);
        assert!(matches!(
            parse_images(&img[..18]),
            Err(Error::Format { offset: 18, .. })
        ));
        assert!(parse_labels(&[0, 0, 8]).is_err());
    }

    #[test]
    fn count_mismatch() {
        let img = encode_images(1, 1, &[1, 2]);
        let lab = encode_labels(&[5]);
        assert!(decode_dataset(&img, &lab, 5, (1, 1)).is_err());
    }

    #[test]
    fn out_of_range_label_gives_empty_set() {
        let img = encode_images(1, 1, &[1, 2]);
        let lab = encode_labels(&[5, 3]);
        let d = decode_dataset(&img, &lab, 12, (1, 1)).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.source_meta.total, 2);
    }
}

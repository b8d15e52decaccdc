use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Maps [-1,1] to 0..=255, rounding half away from zero; out-of-range values clamp.
pub fn to_u8_pixels(x: &Tensor) -> Vec<u8> {
    x.data()
        .iter()
        .map(|&v| ((f64::from(v).clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8)
        .collect()
}

/// 8-bit grayscale PNG of a `[1, H, W]` or `[H, W]` tensor.
pub fn encode_png(x: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match *x.shape() {
        [1, h, w] | [h, w] => (h, w),
        _ => {
            return Err(Error::Argument(format!(
                "PNG export needs a single-channel image, got shape {:?}",
                x.shape()
            )))
        }
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&to_u8_pixels(x))?;
    }
    Ok(out)
}

pub fn export_png(x: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_png(x)?;
    super::write_file(path.as_ref(), &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes_and_rounding() {
        assert_eq!(to_u8_pixels(&Tensor::full(&[1, 2, 2], -1.0)), vec![0; 4]);
        assert_eq!(to_u8_pixels(&Tensor::full(&[1, 2, 2], 1.0)), vec![255; 4]);
        // 0 maps to 127.5, which rounds away from zero
        assert_eq!(to_u8_pixels(&Tensor::full(&[1, 1, 1], 0.0)), vec![128]);
        assert_eq!(to_u8_pixels(&Tensor::full(&[1, 1, 1], 7.0)), vec![255]);
    }

    #[test]
    fn png_decodes_back() {
        let t = Tensor::new(vec![1, 2, 3], vec![-1.0, -0.5, 0.0, 0.25, 0.5, 1.0]).unwrap();
        let bytes = encode_png(&t).unwrap();
        let mut reader = png::Decoder::new(std::io::Cursor::new(bytes))
            .read_info()
            .unwrap();
        let mut buf = vec![0; 6];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (3, 2));
        assert_eq!(buf, to_u8_pixels(&t));
        assert!(encode_png(&Tensor::zeros(&[3, 2, 2])).is_err());
    }
}

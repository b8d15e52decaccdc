//! Random affine augmentation (scale, rotation, translation) for training images.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub scale_min: f64,
    pub scale_max: f64,
    pub max_rotation_deg: f64,
    /// Maximum shift as a fraction of the image side.
    pub max_translate: f64,
    /// Value used for pixels sampled from outside the source image.
    pub fill: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            scale_min: 0.9,
            scale_max: 1.1,
            max_rotation_deg: 15.0,
            max_translate: 0.1,
            fill: -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub scale: f64,
    pub rotation: f64,
    pub shift_x: f64,
    pub shift_y: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        scale: 1.0,
        rotation: 0.0,
        shift_x: 0.0,
        shift_y: 0.0,
    };

    pub fn sample<R: Rng + ?Sized>(
        cfg: &AugmentConfig,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let scale = rng.random_range(cfg.scale_min..=cfg.scale_max);
        let rotation = rng
            .random_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg)
            .to_radians();
        let shift_x = rng.random_range(-cfg.max_translate..=cfg.max_translate) * width as f64;
        let shift_y = rng.random_range(-cfg.max_translate..=cfg.max_translate) * height as f64;
        Self {
            scale,
            rotation,
            shift_x,
            shift_y,
        }
    }

    /// Warps `img` (`[C, H, W]`) about its centre with bilinear sampling.
    pub fn apply(&self, img: &Tensor, fill: f32) -> Tensor {
        let shape = img.shape();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (sin, cos) = self.rotation.sin_cos();
        let src = img.data();
        let mut out = vec![fill; src.len()];
        for y in 0..h {
            for x in 0..w {
                // invert: dst = R·s·(src − c) + c + shift
                let dx = (x as f64 - cx - self.shift_x) / self.scale;
                let dy = (y as f64 - cy - self.shift_y) / self.scale;
                let sx = cos * dx + sin * dy + cx;
                let sy = -sin * dx + cos * dy + cy;
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
                for ch in 0..c {
                    let plane = &src[ch * h * w..(ch + 1) * h * w];
                    let at = |yy: f64, xx: f64| -> f32 {
                        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
                            fill
                        } else {
                            plane[yy as usize * w + xx as usize]
                        }
                    };
                    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1.0) * fx;
                    let bottom = at(y0 + 1.0, x0) * (1.0 - fx) + at(y0 + 1.0, x0 + 1.0) * fx;
                    out[ch * h * w + y * w + x] = top * (1.0 - fy) + bottom * fy;
                }
            }
        }
        Tensor::new(shape.to_vec(), out).expect("shape preserved")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp() -> Tensor {
        Tensor::new(vec![1, 6, 6], (0..36).map(|i| i as f32 / 36.0).collect()).unwrap()
    }

    #[test]
    fn identity_is_exact() {
        let img = ramp();
        assert_eq!(Affine::IDENTITY.apply(&img, -1.0), img);
    }

    #[test]
    fn integer_shift_moves_pixels() {
        let img = ramp();
        let a = Affine {
            shift_x: 1.0,
            ..Affine::IDENTITY
        };
        let out = a.apply(&img, -1.0);
        assert_eq!(out.data()[0], -1.0);
        assert_eq!(out.data()[1], img.data()[0]);
    }

    #[test]
    fn sampled_parameters_stay_in_range() {
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let a = Affine::sample(&cfg, 32, 32, &mut rng);
            assert!((0.9..=1.1).contains(&a.scale));
            assert!(a.rotation.abs() <= 15f64.to_radians() + 1e-12);
            assert!(a.shift_x.abs() <= 3.2 + 1e-12 && a.shift_y.abs() <= 3.2 + 1e-12);
        }
    }
}

use super::PerceptualMetric;
use crate::error::Result;
use crate::tensor::Tensor;

/// Multi-scale patch-normalized distance; a self-contained stand-in for LPIPS.
///
/// At each scale (full, half and quarter resolution by average pooling) the
/// image is cut into non-overlapping `patch`×`patch` tiles per channel, each
/// tile is standardized, and the mean squared difference of standardized
/// tiles is averaged. Scales too small to hold one tile are skipped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProxyDistance {
    pub patch: usize,
    pub scales: usize,
    pub variance_floor: f64,
}

impl Default for ProxyDistance {
    fn default() -> Self {
        Self {
            patch: 4,
            scales: 3,
            variance_floor: 1e-6,
        }
    }
}

impl ProxyDistance {
    pub const NAME: &'static str = "proxy";

    fn scale_distance(&self, x: &[f64], y: &[f64], c: usize, h: usize, w: usize) -> Option<f64> {
        let p = self.patch;
        let (ph, pw) = (h / p, w / p);
        if ph == 0 || pw == 0 {
            return None;
        }
        let n = (p * p) as f64;
        let mut total = 0.0;
        let mut a = vec![0.0; p * p];
        let mut b = vec![0.0; p * p];
        for ch in 0..c {
            for py in 0..ph {
                for px in 0..pw {
                    for dy in 0..p {
                        for dx in 0..p {
                            let idx = ch * h * w + (py * p + dy) * w + px * p + dx;
                            a[dy * p + dx] = x[idx];
                            b[dy * p + dx] = y[idx];
                        }
                    }
                    self.standardize(&mut a);
                    self.standardize(&mut b);
                    total += a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / n;
                }
            }
        }
        Some(total / (c * ph * pw) as f64)
    }

    fn standardize(&self, v: &mut [f64]) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / var.max(self.variance_floor).sqrt();
        for x in v.iter_mut() {
            *x = (*x - mean) * inv;
        }
    }
}

fn pool2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &x[ch * h * w..];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * w + 2 * xx;
                out.push((plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) / 4.0);
            }
        }
    }
    out
}

impl PerceptualMetric for ProxyDistance {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn distance(&self, x: &Tensor, y: &Tensor) -> Result<f64> {
        x.ensure_same_shape(y)?;
        let shape = x.shape();
        let (c, mut h, mut w) = match *shape {
            [c, h, w] => (c, h, w),
            [h, w] => (1, h, w),
            _ => (1, 1, x.len()),
        };
        let mut a: Vec<f64> = x.data().iter().map(|&v| f64::from(v)).collect();
        let mut b: Vec<f64> = y.data().iter().map(|&v| f64::from(v)).collect();
        let mut sum = 0.0;
        let mut used = 0;
        for s in 0..self.scales {
            if s > 0 {
                a = pool2(&a, c, h, w);
                b = pool2(&b, c, h, w);
                h /= 2;
                w /= 2;
            }
            if let Some(d) = self.scale_distance(&a, &b, c, h, w) {
                sum += d;
                used += 1;
            }
        }
        Ok(if used == 0 { 0.0 } else { sum / used as f64 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn img(seed: u64) -> Tensor {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(&[1, 16, 16], &mut r).clamp(-0.8, 0.8)
    }

    #[test]
    fn identity_and_distinctness() {
        let m = ProxyDistance::default();
        let x = img(0);
        assert_eq!(m.distance(&x, &x).unwrap(), 0.0);
        let neg = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| -v).collect()).unwrap();
        assert!(m.distance(&x, &neg).unwrap() > 0.0);
    }

    #[test]
    fn constant_offset_is_absorbed() {
        let m = ProxyDistance::default();
        let (x, y) = (img(1), img(2));
        let d = m.distance(&x, &y).unwrap();
        for off in [0.1f32, -0.1] {
            let shift = |t: &Tensor| {
                Tensor::new(
                    t.shape().to_vec(),
                    t.data().iter().map(|v| v + off).collect(),
                )
                .unwrap()
            };
            let d2 = m.distance(&shift(&x), &shift(&y)).unwrap();
            assert!((d - d2).abs() < 1e-4 * d.max(1.0), "{d} vs {d2}");
        }
    }

    #[test]
    fn pooling_hand_example() {
        let p = pool2(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], 1, 2, 4);
        assert_eq!(p, vec![3.5, 5.5]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let m = ProxyDistance::default();
        assert!(m.distance(&img(0), &Tensor::zeros(&[1, 8, 8])).is_err());
    }
}

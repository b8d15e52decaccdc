//! Slerp crossover of noise genotypes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::{Genotype, InjectedNoise};
use crate::tensor::Tensor;

pub const DEFAULT_PARALLEL_EPSILON: f64 = 1e-5;

/// Spherical interpolation between two flattened vectors.
///
/// Nearly parallel or antipodal pairs fall back to a linear blend rescaled to
/// `(1-λ)‖a‖ + λ‖b‖`. An exactly cancelling blend has no direction to rescale
/// and is returned as is.
pub fn slerp(a: &[f32], b: &[f32], lambda: f64, parallel_epsilon: f64) -> Result<Vec<f32>> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: vec![a.len()],
            actual: vec![b.len()],
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Argument(format!("lambda {lambda} outside [0,1]")));
    }
    if !(parallel_epsilon.is_finite() && parallel_epsilon > 0.0) {
        return Err(Error::Argument("parallel_epsilon must be positive".into()));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Argument("slerp of a zero vector".into()));
    }
    if lambda == 0.0 {
        return Ok(a.to_vec());
    }
    if lambda == 1.0 {
        return Ok(b.to_vec());
    }
    let theta = (dot / (na * nb)).clamp(-1.0, 1.0).acos();
    if theta < parallel_epsilon || theta > std::f64::consts::PI - parallel_epsilon {
        let mixed: Vec<f64> = a
            .iter()
            .zip(b)
            .map(|(&x, &y)| (1.0 - lambda) * f64::from(x) + lambda * f64::from(y))
            .collect();
        let norm = mixed.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if norm > 0.0 {
            ((1.0 - lambda) * na + lambda * nb) / norm
        } else {
            1.0
        };
        return Ok(mixed.iter().map(|v| (v * scale) as f32).collect());
    }
    let sin = theta.sin();
    let wa = ((1.0 - lambda) * theta).sin() / sin;
    let wb = (lambda * theta).sin() / sin;
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| (wa * f64::from(x) + wb * f64::from(y)) as f32)
        .collect())
}

pub fn slerp_tensor(a: &Tensor, b: &Tensor, lambda: f64, parallel_epsilon: f64) -> Result<Tensor> {
    a.ensure_same_shape(b)?;
    Tensor::new(
        a.shape().to_vec(),
        slerp(a.data(), b.data(), lambda, parallel_epsilon)?,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverParams {
    pub lambda: f64,
    pub t_interp: usize,
    pub parallel_epsilon: f64,
}

impl CrossoverParams {
    pub fn new(lambda: f64, t_interp: usize) -> Self {
        Self {
            lambda,
            t_interp,
            parallel_epsilon: DEFAULT_PARALLEL_EPSILON,
        }
    }
}

/// Child initial noise and the interpolated noise for steps T .. T-t_interp+1.
pub fn crossover(
    a: &Genotype,
    b: &Genotype,
    params: &CrossoverParams,
) -> Result<(Tensor, InjectedNoise)> {
    if a.steps() != b.steps() {
        return Err(Error::Argument(format!(
            "parents have {} and {} steps",
            a.steps(),
            b.steps()
        )));
    }
    if params.t_interp > a.steps() {
        return Err(Error::Argument(format!(
            "t_interp {} exceeds T={}",
            params.t_interp,
            a.steps()
        )));
    }
    let eps = params.parallel_epsilon;
    let x_t = slerp_tensor(&a.x_t, &b.x_t, params.lambda, eps)?;
    let z = a.z[..params.t_interp]
        .iter()
        .zip(&b.z[..params.t_interp])
        .map(|(za, zb)| {
            // z_1 is all zeros under the zero final-step convention
            if za.data().iter().chain(zb.data()).all(|&v| v == 0.0) {
                za.ensure_same_shape(zb)?;
                Ok(za.clone())
            } else {
                slerp_tensor(za, zb, params.lambda, eps)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((x_t, InjectedNoise { z }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_midpoint() {
        let r = slerp(&[1.0, 0.0], &[0.0, 1.0], 0.5, 1e-5).unwrap();
        let h = std::f32::consts::FRAC_1_SQRT_2;
        assert!((r[0] - h).abs() < 1e-7 && (r[1] - h).abs() < 1e-7);
    }

    #[test]
    fn endpoints_are_exact_copies() {
        let a = [0.3, -1.2, 2.5];
        let b = [1.0, 0.1, -0.7];
        assert_eq!(slerp(&a, &b, 0.0, 1e-5).unwrap(), a);
        assert_eq!(slerp(&a, &b, 1.0, 1e-5).unwrap(), b);
    }

    #[test]
    fn parallel_and_antipodal_fallback() {
        let a = [1.0, 2.0, 3.0];
        for l in [0.1, 0.5, 0.9] {
            let r = slerp(&a, &a, l, 1e-5).unwrap();
            for (x, y) in r.iter().zip(&a) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        let b = [2.0, 4.0, 6.0];
        let r = slerp(&a, &b, 0.5, 1e-5).unwrap();
        assert!((r[0] - 1.5).abs() < 1e-6);
        let neg = [-2.0, -4.0, -6.0];
        let r = slerp(&a, &neg, 0.25, 1e-5).unwrap();
        let norm: f32 = r.iter().map(|v| v * v).sum::<f32>().sqrt();
        let expect = 0.75 * 14f32.sqrt() + 0.25 * 56f32.sqrt();
        assert!((norm - expect).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(slerp(&[0.0, 0.0], &[1.0, 0.0], 0.5, 1e-5).is_err());
        assert!(slerp(&[1.0], &[1.0, 0.0], 0.5, 1e-5).is_err());
        assert!(slerp(&[1.0, 0.0], &[0.0, 1.0], 1.5, 1e-5).is_err());
    }

    fn geno(seed: f32, steps: usize) -> Genotype {
        let t = |k: f32| Tensor::new(vec![1, 1, 2], vec![seed + k, 1.0 - k]).unwrap();
        Genotype {
            x_t: t(0.5),
            z: (0..steps).map(|i| t(i as f32)).collect(),
        }
    }

    #[test]
    fn crossover_covers_only_interpolated_steps() {
        let (a, b) = (geno(1.0, 5), geno(-3.0, 5));
        let (x, inj) = crossover(&a, &b, &CrossoverParams::new(0.0, 3)).unwrap();
        assert_eq!(x, a.x_t);
        assert_eq!(inj.z, a.z[..3].to_vec());
        let (_, inj) = crossover(&a, &b, &CrossoverParams::new(0.4, 0)).unwrap();
        assert!(inj.is_empty());
        let (x, inj) = crossover(&a, &a, &CrossoverParams::new(0.4, 5)).unwrap();
        assert!(x
            .data()
            .iter()
            .zip(a.x_t.data())
            .all(|(p, q)| (p - q).abs() < 1e-6));
        assert_eq!(inj.len(), 5);
        let (mut za, mut zb) = (a.clone(), b.clone());
        za.z[4] = Tensor::zeros(&[1, 1, 2]);
        zb.z[4] = Tensor::zeros(&[1, 1, 2]);
        let (_, inj) = crossover(&za, &zb, &CrossoverParams::new(0.3, 5)).unwrap();
        assert_eq!(inj.z[4], Tensor::zeros(&[1, 1, 2]));
        assert!(crossover(&a, &geno(0.0, 4), &CrossoverParams::new(0.5, 2)).is_err());
        assert!(crossover(&a, &b, &CrossoverParams::new(0.5, 6)).is_err());
    }
}

//! Diffusion coefficient tables and the closed-form forward process.
//!
//! All public interfaces use 1-indexed steps `t = 1..=T`; storage is
//! 0-indexed. Tables are computed once in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters that fully determine a linear schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// β linearly spaced from `beta_start` at t=1 to `beta_end` at t=T.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Config(format!("schedule needs T >= 2, got {steps}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "schedule endpoints must satisfy 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let span = beta_end - beta_start;
        let last = (steps - 1) as f64;
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                if i + 1 == steps {
                    beta_end
                } else {
                    beta_start + span * (i as f64 / last)
                }
            })
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0f64;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let sigma = beta.iter().map(|b| b.sqrt()).collect();
        Ok(Self {
            params: ScheduleParams {
                steps,
                beta_start,
                beta_end,
            },
            beta,
            alpha,
            alpha_bar,
            sigma,
        })
    }

    pub fn from_params(p: ScheduleParams) -> Result<Self> {
        Self::linear(p.steps, p.beta_start, p.beta_end)
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.params.steps
    }

    fn idx(&self, t: usize) -> usize {
        assert!(
            (1..=self.steps()).contains(&t),
            "step t={t} outside 1..={}",
            self.steps()
        );
        t - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[self.idx(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[self.idx(t)]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[self.idx(t)]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[self.idx(t)]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if !(1..=self.steps()).contains(&t) {
            return Err(Error::Argument(format!(
                "step t={t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// `x_t = sqrt(ᾱ_t)·x0 + sqrt(1 − ᾱ_t)·eps`.
pub fn forward_diffuse(
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    sched.check_step(t)?;
    x0.ensure_same_shape(eps)?;
    let ab = sched.alpha_bar(t);
    let a = ab.sqrt() as f32;
    let b = (1.0 - ab).sqrt() as f32;
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| a * x + b * e)
        .collect();
    Tensor::new(x0.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_config() {
        assert!(NoiseSchedule::linear(1, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.03, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn first_alpha_bar() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.alpha_bar(1), 0.9999);
        assert_eq!(s.beta(1000), 0.02);
    }

    #[test]
    fn two_step_constant() {
        let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(2), 0.25);
    }

    #[test]
    fn table_invariants() {
        let s = NoiseSchedule::linear(200, 5e-4, 0.1).unwrap();
        for t in 1..=200 {
            assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
            assert_eq!(s.alpha(t), 1.0 - s.beta(t));
            assert_eq!(s.sigma(t), s.beta(t).sqrt());
            let prev = if t == 1 { 1.0 } else { s.alpha_bar(t - 1) };
            assert_eq!(s.alpha_bar(t), prev * s.alpha(t));
            if t > 1 {
                assert!(s.beta(t) >= s.beta(t - 1));
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
        }
    }

    #[test]
    fn forward_zero_noise_and_zero_image() {
        let s = NoiseSchedule::linear(10, 1e-4, 0.02).unwrap();
        let x0 = Tensor::new(vec![1, 2, 2], vec![0.5, -0.5, 1.0, 0.0]).unwrap();
        let zero = Tensor::zeros(&[1, 2, 2]);
        let out = forward_diffuse(&x0, 1, &zero, &s).unwrap();
        for (o, x) in out.data().iter().zip(x0.data()) {
            assert!((o - x).abs() <= 1e-4 * x.abs());
        }
        let e = Tensor::full(&[1, 2, 2], 1.0);
        let out = forward_diffuse(&zero, 7, &e, &s).unwrap();
        let want = (1.0 - s.alpha_bar(7)).sqrt() as f32;
        assert!(out.data().iter().all(|&v| v == want));
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let s = NoiseSchedule::linear(10, 1e-4, 0.02).unwrap();
        let x0 = Tensor::zeros(&[1, 2, 2]);
        let e = Tensor::zeros(&[1, 2, 3]);
        assert!(forward_diffuse(&x0, 1, &e, &s).is_err());
        assert!(forward_diffuse(&x0, 0, &x0, &s).is_err());
    }
}

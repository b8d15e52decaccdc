//! Reverse diffusion with optional noise injection.
//!
//! Every call records the noise it actually used, so `(x_T, Z)` is enough to
//! regenerate an image bit for bit.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserModel;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// Initial noise plus the full per-step noise sequence.
///
/// `z` is stored in sampling order: `z[0]` is z_T and `z[T-1]` is z_1.
#[derive(Clone, Debug, PartialEq)]
pub struct Genotype {
    pub x_t: Tensor,
    pub z: Vec<Tensor>,
}

impl Genotype {
    pub fn steps(&self) -> usize {
        self.z.len()
    }

    /// z_t for 1-indexed `t`.
    pub fn z_at(&self, t: usize) -> &Tensor {
        &self.z[self.z.len() - t]
    }

    pub fn validate(&self, shape: &[usize], steps: usize) -> Result<()> {
        self.x_t.ensure_shape(shape)?;
        if self.z.len() != steps {
            return Err(Error::Argument(format!(
                "genotype holds {} noise steps, schedule has {steps}",
                self.z.len()
            )));
        }
        for (i, z) in self.z.iter().enumerate() {
            z.ensure_shape(shape)?;
            if !z.is_finite() {
                return Err(Error::NonFiniteStep { step: steps - i });
            }
        }
        Ok(())
    }

    /// The first `t_interp` steps as an injection sequence.
    pub fn injected(&self, t_interp: usize) -> InjectedNoise {
        InjectedNoise {
            z: self.z[..t_interp.min(self.z.len())].to_vec(),
        }
    }
}

/// Noise for the leading steps T, T-1, ..., T-len+1 (in that order).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InjectedNoise {
    pub z: Vec<Tensor>,
}

impl InjectedNoise {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// What to add after the last denoising step (t = 1).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalStepNoise {
    /// z_1 = 0, recorded as a zero tensor.
    #[default]
    Zero,
    /// Draw z_1 like every other step.
    Sampled,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SampleOptions {
    pub t_interp: usize,
    pub snapshot_stride: Option<usize>,
    pub final_step: FinalStepNoise,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `(t, x_t)` with strictly decreasing t.
    pub snapshots: Vec<(usize, Tensor)>,
    pub final_image: Tensor,
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub x0: Tensor,
    pub genotype: Genotype,
    pub trajectory: Option<Trajectory>,
}

/// A partially finished reverse process. Cloning it lets several samples
/// share a common prefix of steps; the result is identical to running each
/// sample from scratch because every step depends only on `x` and `t`.
#[derive(Clone, Debug)]
pub struct ReverseState {
    x_init: Tensor,
    x: Tensor,
    /// Next step to run; 0 once finished.
    t: usize,
    steps: usize,
    z: Vec<Tensor>,
    stride: Option<usize>,
    snapshots: Vec<(usize, Tensor)>,
    final_step: FinalStepNoise,
}

impl ReverseState {
    pub fn new(
        model: &DenoiserModel,
        sched: &NoiseSchedule,
        x_t: Tensor,
        snapshot_stride: Option<usize>,
        final_step: FinalStepNoise,
    ) -> Result<Self> {
        x_t.ensure_shape(&model.image_shape())?;
        if snapshot_stride == Some(0) {
            return Err(Error::Argument("snapshot stride must be positive".into()));
        }
        let steps = sched.steps();
        Ok(Self {
            x: x_t.clone(),
            x_init: x_t,
            t: steps,
            steps,
            z: Vec::with_capacity(steps),
            stride: snapshot_stride,
            snapshots: Vec::new(),
            final_step,
        })
    }

    /// The step that will run next (0 when done).
    pub fn next_step(&self) -> usize {
        self.t
    }

    pub fn current(&self) -> &Tensor {
        &self.x
    }

    /// One reverse step with the given noise.
    pub fn step(&mut self, model: &DenoiserModel, sched: &NoiseSchedule, z: Tensor) -> Result<()> {
        let t = self.t;
        if t == 0 {
            return Err(Error::Argument("reverse process already finished".into()));
        }
        z.ensure_same_shape(&self.x)?;
        let eps = model.predict_noise(&self.x, t)?;
        let inv_sqrt_alpha = (1.0 / sched.alpha(t).sqrt()) as f32;
        let eps_coef = (sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt()) as f32;
        let sigma = sched.sigma(t) as f32;
        for ((x, &e), &n) in self.x.data_mut().iter_mut().zip(eps.data()).zip(z.data()) {
            *x = inv_sqrt_alpha * (*x - eps_coef * e) + sigma * n;
        }
        if !self.x.is_finite() {
            return Err(Error::NonFiniteStep { step: t });
        }
        self.z.push(z);
        self.t -= 1;
        if let Some(s) = self.stride {
            if self.t >= 1 && self.t.is_multiple_of(s) {
                self.snapshots.push((self.t, self.x.clone()));
            }
        }
        Ok(())
    }

    /// Runs the injected prefix, then fresh noise from `rng` down to `until`
    /// (exclusive: stops with `next_step() == until`).
    pub fn run<R: Rng + ?Sized>(
        &mut self,
        model: &DenoiserModel,
        sched: &NoiseSchedule,
        injected: Option<&InjectedNoise>,
        t_interp: usize,
        until: usize,
        rng: &mut R,
    ) -> Result<()> {
        let steps = self.steps;
        while self.t > until {
            let t = self.t;
            let z = match injected {
                Some(inj) if t > steps - t_interp => {
                    inj.z.get(steps - t).cloned().ok_or_else(|| {
                        Error::Argument(format!("injected noise has no entry for step t={t}"))
                    })?
                }
                _ if t == 1 && self.final_step == FinalStepNoise::Zero => {
                    Tensor::zeros(self.x.shape())
                }
                _ => Tensor::randn(self.x.shape(), rng),
            };
            self.step(model, sched, z)?;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<Generated> {
        if self.t != 0 {
            return Err(Error::Argument(format!(
                "reverse process stopped at t={}",
                self.t
            )));
        }
        let trajectory = self.stride.map(|_| Trajectory {
            snapshots: self.snapshots,
            final_image: self.x.clone(),
        });
        Ok(Generated {
            x0: self.x,
            genotype: Genotype {
                x_t: self.x_init,
                z: self.z,
            },
            trajectory,
        })
    }
}

fn check_injection(steps: usize, injected: Option<&InjectedNoise>, t_interp: usize) -> Result<()> {
    if t_interp > steps {
        return Err(Error::Argument(format!(
            "t_interp {t_interp} exceeds T={steps}"
        )));
    }
    if let Some(inj) = injected {
        if inj.len() < t_interp {
            return Err(Error::Argument(format!(
                "injected noise covers {} steps, t_interp needs {t_interp}",
                inj.len()
            )));
        }
    }
    Ok(())
}

/// Generates x_0 from `x_t`. Steps t > T - t_interp take their noise from
/// `injected` (when given); the rest draw from `rng`.
pub fn generate<R: Rng + ?Sized>(
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    x_t: &Tensor,
    injected: Option<&InjectedNoise>,
    opts: SampleOptions,
    rng: &mut R,
) -> Result<Generated> {
    check_injection(sched.steps(), injected, opts.t_interp)?;
    let mut state = ReverseState::new(
        model,
        sched,
        x_t.clone(),
        opts.snapshot_stride,
        opts.final_step,
    )?;
    state.run(model, sched, injected, opts.t_interp, 0, rng)?;
    state.finish()
}

/// Regenerates the image encoded by a genotype.
pub fn replay(model: &DenoiserModel, sched: &NoiseSchedule, g: &Genotype) -> Result<Tensor> {
    g.validate(&model.image_shape(), sched.steps())?;
    let inj = InjectedNoise { z: g.z.clone() };
    // every step is injected, so this stream is never drawn from
    let mut never = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let opts = SampleOptions {
        t_interp: sched.steps(),
        ..SampleOptions::default()
    };
    Ok(generate(model, sched, &g.x_t, Some(&inj), opts, &mut never)?.x0)
}

/// Continues a shared injected prefix into several independent samples.
///
/// The prefix (steps T .. T-t_interp+1) runs once; each rng in `rngs` then
/// finishes its own copy. Output order follows `rngs`.
pub fn generate_branched<R: Rng>(
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    x_t: &Tensor,
    injected: Option<&InjectedNoise>,
    opts: SampleOptions,
    rngs: &mut [R],
) -> Result<Vec<Generated>> {
    let steps = sched.steps();
    check_injection(steps, injected, opts.t_interp)?;
    let mut prefix = ReverseState::new(
        model,
        sched,
        x_t.clone(),
        opts.snapshot_stride,
        opts.final_step,
    )?;
    if injected.is_some() {
        let mut unused = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        prefix.run(
            model,
            sched,
            injected,
            opts.t_interp,
            steps - opts.t_interp,
            &mut unused,
        )?;
    }
    rngs.iter_mut()
        .map(|rng| {
            let mut s = prefix.clone();
            s.run(model, sched, injected, opts.t_interp, 0, rng)?;
            s.finish()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::ArchConfig;
    use crate::rng::{self, Purpose};

    fn setup() -> (DenoiserModel, NoiseSchedule) {
        let arch = ArchConfig {
            base_width: 8,
            channel_mults: vec![1, 2],
            blocks_per_level: 1,
            time_dim: 16,
            norm_groups: 4,
        };
        let mut m = DenoiserModel::new(arch, [1, 8, 8], 0).unwrap();
        let mut r = rng::stream(9, Purpose::Parameters, &[]);
        for p in m.params_mut() {
            *p += r.random_range(-0.05..0.05);
        }
        (m, NoiseSchedule::linear(20, 1e-3, 0.2).unwrap())
    }

    fn x_t(seed: u64) -> Tensor {
        Tensor::randn(
            &[1, 8, 8],
            &mut rng::stream(seed, Purpose::InitialNoise, &[]),
        )
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let (m, s) = setup();
        let run = || {
            let mut r = rng::stream(1, Purpose::Mutation, &[]);
            generate(&m, &s, &x_t(0), None, SampleOptions::default(), &mut r).unwrap()
        };
        let (a, b) = (run(), run());
        assert!(a.x0.bit_eq(&b.x0));
        assert_eq!(a.genotype, b.genotype);
        assert_eq!(a.genotype.steps(), 20);
        assert!(a.genotype.z_at(1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_replay_is_bit_exact() {
        let (m, s) = setup();
        let mut r = rng::stream(2, Purpose::Mutation, &[]);
        let g = generate(&m, &s, &x_t(1), None, SampleOptions::default(), &mut r).unwrap();
        assert!(replay(&m, &s, &g.genotype).unwrap().bit_eq(&g.x0));
    }

    #[test]
    fn injecting_all_but_last_step_matches_under_zero_convention() {
        let (m, s) = setup();
        let mut r = rng::stream(3, Purpose::Mutation, &[]);
        let parent = generate(&m, &s, &x_t(2), None, SampleOptions::default(), &mut r).unwrap();
        let opts = SampleOptions {
            t_interp: 19,
            ..Default::default()
        };
        let inj = parent.genotype.injected(19);
        let mut r2 = rng::stream(4, Purpose::Mutation, &[]);
        let child = generate(&m, &s, &x_t(2), Some(&inj), opts, &mut r2).unwrap();
        assert!(child.x0.bit_eq(&parent.x0));

        let lit = SampleOptions {
            t_interp: 19,
            final_step: FinalStepNoise::Sampled,
            ..Default::default()
        };
        let child = generate(&m, &s, &x_t(2), Some(&inj), lit, &mut r2).unwrap();
        assert!(!child.x0.bit_eq(&parent.x0));
        assert!(child.genotype.z_at(1).norm() > 0.0);
    }

    #[test]
    fn injected_entries_are_copied_verbatim() {
        let (m, s) = setup();
        let inj = InjectedNoise {
            z: (0..7).map(|i| x_t(100 + i)).collect(),
        };
        let opts = SampleOptions {
            t_interp: 7,
            ..Default::default()
        };
        let mut r = rng::stream(5, Purpose::Mutation, &[]);
        let g = generate(&m, &s, &x_t(3), Some(&inj), opts, &mut r).unwrap();
        for k in 0..7 {
            assert!(g.genotype.z[k].bit_eq(&inj.z[k]));
        }
        assert!(!g.genotype.z[7].bit_eq(&inj.z[0]));
    }

    #[test]
    fn short_injection_is_rejected() {
        let (m, s) = setup();
        let inj = InjectedNoise { z: vec![x_t(0); 3] };
        let opts = SampleOptions {
            t_interp: 4,
            ..Default::default()
        };
        let mut r = rng::stream(0, Purpose::Mutation, &[]);
        assert!(generate(&m, &s, &x_t(0), Some(&inj), opts, &mut r).is_err());
        let opts = SampleOptions {
            t_interp: 21,
            ..Default::default()
        };
        assert!(generate(&m, &s, &x_t(0), None, opts, &mut r).is_err());
    }

    #[test]
    fn snapshots_follow_stride() {
        let (m, s) = setup();
        let opts = SampleOptions {
            snapshot_stride: Some(5),
            ..Default::default()
        };
        let mut r = rng::stream(0, Purpose::Mutation, &[]);
        let g = generate(&m, &s, &x_t(0), None, opts, &mut r).unwrap();
        let tr = g.trajectory.unwrap();
        let ts: Vec<usize> = tr.snapshots.iter().map(|(t, _)| *t).collect();
        assert_eq!(ts, vec![15, 10, 5]);
        assert!(tr.final_image.bit_eq(&g.x0));
    }

    #[test]
    fn branching_matches_independent_runs() {
        let (m, s) = setup();
        let inj = InjectedNoise {
            z: (0..12).map(|i| x_t(200 + i)).collect(),
        };
        let opts = SampleOptions {
            t_interp: 12,
            ..Default::default()
        };
        let mut rngs: Vec<_> = (0..3)
            .map(|k| rng::stream(7, Purpose::Mutation, &[k]))
            .collect();
        let branched = generate_branched(&m, &s, &x_t(4), Some(&inj), opts, &mut rngs).unwrap();
        for (k, b) in branched.iter().enumerate() {
            let mut r = rng::stream(7, Purpose::Mutation, &[k as u64]);
            let solo = generate(&m, &s, &x_t(4), Some(&inj), opts, &mut r).unwrap();
            assert!(solo.x0.bit_eq(&b.x0));
            assert_eq!(solo.genotype, b.genotype);
        }
    }
}

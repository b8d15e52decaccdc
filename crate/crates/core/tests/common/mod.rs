#![allow(dead_code)]

use diffusion_crossover::denoiser::{ArchConfig, DenoiserModel};
use diffusion_crossover::rng::{self, Purpose};
use diffusion_crossover::schedule::NoiseSchedule;
use rand::Rng;

/// A small untrained network with perturbed weights so outputs depend on the input.
pub fn tiny_model(seed: u64) -> DenoiserModel {
    let arch = ArchConfig {
        base_width: 8,
        channel_mults: vec![1, 2],
        blocks_per_level: 1,
        time_dim: 16,
        norm_groups: 4,
    };
    let mut m = DenoiserModel::new(arch, [1, 8, 8], seed).unwrap();
    let mut r = rng::stream(seed, Purpose::Parameters, &[99]);
    for p in m.params_mut() {
        *p += r.random_range(-0.05..0.05);
    }
    m
}

pub fn tiny_schedule(steps: usize) -> NoiseSchedule {
    NoiseSchedule::linear(steps, 1e-3, 0.2).unwrap()
}

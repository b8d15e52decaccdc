//! Samples images, stores their genotypes and regenerates them bit for bit.
//!
//! cargo run --release --example sample_and_replay -- <checkpoint> [n=4] [out-dir=samples]

use std::path::PathBuf;

use diffusion_crossover::dataio;
use diffusion_crossover::rng::{self, Purpose};
use diffusion_crossover::sampler::{generate, replay, SampleOptions};
use diffusion_crossover::tensor::Tensor;

fn main() -> diffusion_crossover::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(ckpt) = args.first() else {
        eprintln!("usage: sample_and_replay <checkpoint> [n] [out-dir]");
        std::process::exit(2);
    };
    let n: u64 = args.get(1).map_or(4, |s| s.parse().expect("n"));
    let out = PathBuf::from(args.get(2).map_or("samples", String::as_str));
    std::fs::create_dir_all(&out).expect("out dir");

    let ck = dataio::load_checkpoint(ckpt)?;
    let (model, sched) = (ck.model, ck.schedule);
    let opts = SampleOptions {
        snapshot_stride: Some(sched.steps() / 4),
        ..SampleOptions::default()
    };
    for i in 0..n {
        let x_t = Tensor::randn(&model.image_shape(), &mut rng::stream(0, Purpose::InitialNoise, &[i]));
        let g = generate(&model, &sched, &x_t, None, opts, &mut rng::stream(0, Purpose::Mutation, &[0, i]))?;
        let geno = out.join(format!("{i}.geno"));
        dataio::save_genotype(&g.genotype, &geno)?;
        dataio::export_png(&g.x0, out.join(format!("{i}.png")))?;
        for (t, x) in &g.trajectory.as_ref().expect("snapshots").snapshots {
            dataio::export_png(x, out.join(format!("{i}-t{t}.png")))?;
        }
        let stored = dataio::load_genotype(&geno, Some((&model.image_shape()[..], sched.steps())))?;
        let again = replay(&model, &sched, &stored)?;
        println!("sample {i}: replay identical = {}", again.bit_eq(&g.x0));
    }
    Ok(())
}

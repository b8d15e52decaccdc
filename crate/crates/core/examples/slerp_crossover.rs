//! Crosses two sampled parents at several λ and injection depths.
//!
//! cargo run --release --example slerp_crossover -- <checkpoint> [out-dir=crossover]

use std::path::PathBuf;

use diffusion_crossover::dataio;
use diffusion_crossover::genome::{crossover, slerp, CrossoverParams};
use diffusion_crossover::metrics::{PerceptualMetric, ProxyDistance};
use diffusion_crossover::rng::{self, Purpose};
use diffusion_crossover::sampler::{generate, SampleOptions};
use diffusion_crossover::tensor::Tensor;

fn main() -> diffusion_crossover::Result<()> {
    // on the unit circle the midpoint sits at 45°
    let mid = slerp(&[1.0, 0.0], &[0.0, 1.0], 0.5, 1e-5)?;
    println!("slerp((1,0), (0,1), 0.5) = ({:.4}, {:.4})", mid[0], mid[1]);

    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(ckpt) = args.first() else {
        eprintln!("usage: slerp_crossover <checkpoint> [out-dir]");
        std::process::exit(2);
    };
    let out = PathBuf::from(args.get(1).map_or("crossover", String::as_str));
    std::fs::create_dir_all(&out).expect("out dir");
    let ck = dataio::load_checkpoint(ckpt)?;
    let (model, sched) = (ck.model, ck.schedule);
    let shape = model.image_shape();
    let parent = |k: u64| {
        let x = Tensor::randn(&shape, &mut rng::stream(1, Purpose::InitialNoise, &[k]));
        generate(&model, &sched, &x, None, SampleOptions::default(), &mut rng::stream(1, Purpose::Mutation, &[0, k]))
    };
    let (a, b) = (parent(0)?, parent(1)?);
    dataio::export_png(&a.x0, out.join("parent-a.png"))?;
    dataio::export_png(&b.x0, out.join("parent-b.png"))?;

    let metric = ProxyDistance::default();
    let (ia, ib) = (a.x0.clamp(-1.0, 1.0), b.x0.clamp(-1.0, 1.0));
    let steps = sched.steps();
    for t_interp in [0, steps * 3 / 10, steps * 6 / 10, steps] {
        for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let (x_t, inj) = crossover(&a.genotype, &b.genotype, &CrossoverParams::new(lambda, t_interp))?;
            let opts = SampleOptions {
                t_interp,
                ..SampleOptions::default()
            };
            let child = generate(&model, &sched, &x_t, Some(&inj), opts, &mut rng::stream(1, Purpose::Mutation, &[1, 0]))?;
            let c = child.x0.clamp(-1.0, 1.0);
            println!(
                "t_interp={t_interp:4} λ={lambda:.2}: d(A)={:.3} d(B)={:.3}",
                metric.distance(&c, &ia)?,
                metric.distance(&c, &ib)?
            );
            dataio::export_png(&child.x0, out.join(format!("child-t{t_interp}-l{lambda}.png")))?;
        }
    }
    Ok(())
}

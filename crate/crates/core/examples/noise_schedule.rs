//! Prints the linear β schedule and checks forward diffusion empirically.
//!
//! cargo run --release --example noise_schedule -- [steps=200] [beta_start=5e-4] [beta_end=0.1]

use diffusion_crossover::rng::{self, Purpose};
use diffusion_crossover::schedule::{forward_diffuse, NoiseSchedule};
use diffusion_crossover::tensor::Tensor;

fn main() -> diffusion_crossover::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps = args.first().map_or(200, |s| s.parse().expect("steps"));
    let lo = args.get(1).map_or(5e-4, |s| s.parse().expect("beta_start"));
    let hi = args.get(2).map_or(0.1, |s| s.parse().expect("beta_end"));
    let sched = NoiseSchedule::linear(steps, lo, hi)?;

    println!("t,beta,alpha_bar,sigma");
    for t in (1..=steps).step_by((steps / 10).max(1)).chain([steps]) {
        println!("{t},{:.6},{:.6},{:.6}", sched.beta(t), sched.alpha_bar(t), sched.sigma(t));
    }

    let x0 = Tensor::full(&[1, 64, 64], 0.5);
    let mut r = rng::stream(0, Purpose::Experiment, &[]);
    for t in [steps / 4, steps / 2, steps] {
        let xt = forward_diffuse(&x0, t, &Tensor::randn(&[1, 64, 64], &mut r), &sched)?;
        let resid = Tensor::new(
            vec![64 * 64],
            xt.data().iter().map(|v| v - 0.5 * sched.alpha_bar(t).sqrt() as f32).collect(),
        )?;
        println!(
            "t={t}: residual std {:.3}, expected {:.3}",
            resid.std(),
            (1.0 - sched.alpha_bar(t)).sqrt()
        );
    }
    Ok(())
}

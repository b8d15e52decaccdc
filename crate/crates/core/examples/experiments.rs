//! Runs the three batch experiments on a trained model with the desk preset.
//!
//! cargo run --release --example experiments -- <checkpoint> [seed=0] [which=all|pca|lambda|diversity]

use diffusion_crossover::cli::Preset;
use diffusion_crossover::dataio;
use diffusion_crossover::experiments::{
    diversity_sweep, lambda_sweep, trajectory_pca, DiversitySweepConfig, LambdaSweepConfig, TrajectoryPcaConfig,
};
use diffusion_crossover::metrics::ProxyDistance;

fn main() -> diffusion_crossover::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(ckpt) = args.first() else {
        eprintln!("usage: experiments <checkpoint> [seed] [all|pca|lambda|diversity]");
        std::process::exit(2);
    };
    let seed = args.get(1).map_or(0, |s| s.parse().expect("seed"));
    let which = args.get(2).map_or("all", String::as_str);
    let preset = Preset::load("desk")?;
    let ck = dataio::load_checkpoint(ckpt)?;
    let (model, sched) = (ck.model, ck.schedule);
    let metric = ProxyDistance::default();

    if matches!(which, "all" | "pca") {
        let cfg = TrajectoryPcaConfig {
            seed,
            ..preset.exp1.clone()
        };
        let r = trajectory_pca(&model, &sched, &cfg)?;
        println!("trajectory PCA: explained {:?}", r.explained_variance_ratio);
        for (l, pc1) in &r.final_pc1 {
            println!("  λ={l:.1} final PC1 {pc1:+.3}");
        }
        println!("  rho {:+.3} p {:.4}", r.report.rho, r.report.p_value);
    }
    if matches!(which, "all" | "lambda") {
        let cfg = LambdaSweepConfig {
            seed,
            ..preset.exp2.clone()
        };
        let r = lambda_sweep(&model, &sched, &cfg, &metric)?;
        print!("λ sweep at t_interp={}:\n{}", r.t_interp, r.csv());
        println!(
            "  rho(A) {:+.3} p {:.4}; rho(B) {:+.3} p {:.4}",
            r.rho_a.rho, r.rho_a.p_value, r.rho_b.rho, r.rho_b.p_value
        );
    }
    if matches!(which, "all" | "diversity") {
        let cfg = DiversitySweepConfig {
            seed,
            ..preset.exp3.clone()
        };
        let r = diversity_sweep(&model, &sched, &cfg, &metric)?;
        print!("diversity sweep:\n{}", r.csv());
        println!("  rho {:+.3} p {:.4}", r.report.rho, r.report.p_value);
    }
    Ok(())
}

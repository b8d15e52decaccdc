//! Six generations of scripted selection towards a held-out "5".
//!
//! cargo run --release --example evolve_headless -- <checkpoint> [seed=0] [log=run.jsonl]

use std::path::Path;

use diffusion_crossover::cli::Preset;
use diffusion_crossover::dataio::{self, runlog::replay_log, RunLog};
use diffusion_crossover::evolution::EvolutionConfig;
use diffusion_crossover::experiments::{run_headless, HeadlessConfig};
use diffusion_crossover::metrics::ProxyDistance;

fn main() -> diffusion_crossover::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(ckpt) = args.first() else {
        eprintln!("usage: evolve_headless <checkpoint> [seed] [log]");
        std::process::exit(2);
    };
    let seed: u64 = args.get(1).map_or(0, |s| s.parse().expect("seed"));
    let log_path = args.get(2).map_or("run.jsonl", String::as_str).to_string();
    let preset = Preset::load("desk")?;
    let ck = dataio::load_checkpoint(ckpt)?;
    let (model, sched) = (ck.model, ck.schedule);
    let test = preset.load_test(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data"))?;
    let target = &test.images[seed as usize % test.len()];

    let cfg = HeadlessConfig {
        evolution: EvolutionConfig {
            population_size: preset.evolve.population,
            t_interp0: preset.evolve.t_interp0,
            step: preset.evolve.step,
            seed,
            ..EvolutionConfig::default()
        },
        generations: preset.evolve.generations,
    };
    let mut log = RunLog::create(&log_path)?;
    let run = run_headless(&model, &sched, &cfg, target, &ProxyDistance::default(), Some((&mut log, "desk")))?;
    for (g, d) in run.best_distance.iter().enumerate() {
        println!("generation {}: best distance {d:.4}", g + 1);
    }
    let replayed = replay_log(&RunLog::read(&log_path)?, &model, &sched)?;
    println!("log replays to generation {} with matching images", replayed.generation);
    Ok(())
}

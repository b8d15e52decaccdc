//! Trains the desk-scale noise predictor on the bundled MNIST "5" subset.
//!
//! cargo run --release --example train_desk -- [epochs=30] [out=desk.ckpt]

use std::path::Path;
use std::time::Instant;

use diffusion_crossover::cli::Preset;
use diffusion_crossover::dataio;
use diffusion_crossover::denoiser::{DenoiserModel, TrainEvent, Trainer};
use diffusion_crossover::schedule::NoiseSchedule;

fn main() -> diffusion_crossover::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let preset = Preset::load("desk")?;
    let mut cfg = preset.train.clone();
    if let Some(e) = args.first() {
        cfg.epochs = e.parse().expect("epochs");
        cfg.checkpoint_interval = cfg.checkpoint_interval.min(cfg.epochs.max(1));
    }
    let out = args.get(1).map_or("desk.ckpt", String::as_str).to_string();

    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let ds = preset.load_train(&data)?;
    let sched = NoiseSchedule::from_params(preset.schedule)?;
    let mut model = DenoiserModel::new(preset.model.clone(), preset.image_shape(), cfg.seed)?;
    println!("{} images, {} parameters", ds.len(), model.params().len());

    let mut trainer = Trainer::new(cfg, &model)?;
    let start = Instant::now();
    trainer.run(&mut model, &ds.images, &sched, |ev| {
        match ev {
            TrainEvent::Epoch(l) => {
                println!("epoch {:3} loss {:.5} ({:.0}s)", l.epoch, l.mean_loss, start.elapsed().as_secs_f64())
            }
            TrainEvent::Checkpoint { model, trainer, .. } => dataio::save_checkpoint(model, &sched, Some(trainer), &out)?,
        }
        Ok(())
    })?;
    dataio::save_checkpoint(&model, &sched, Some(&trainer), &out)?;
    println!("saved {out}");
    Ok(())
}

//! Command-line front end: `dxo <command> [flags]`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataio::{self, idx::pixel_stats, load_idx, ImageDataset, RunLog};
use crate::denoiser::train::loss_history_csv;
use crate::denoiser::{ArchConfig, DenoiserModel, TrainConfig, TrainEvent, Trainer};
use crate::error::{Error, Result};
use crate::evolution::{EvolutionConfig, LambdaPolicy};
use crate::experiments::{
    diversity_sweep, lambda_sweep, run_headless, trajectory_pca, DiversitySweepConfig,
    HeadlessConfig, LambdaSweepConfig, TrajectoryPcaConfig,
};
use crate::genome::{crossover, CrossoverParams};
use crate::metrics::ProxyDistance;
use crate::rng::{self, Purpose};
use crate::sampler::{generate, SampleOptions};
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::server::{self, ModelEntry, ServerConfig};
use crate::tensor::Tensor;

const DESK_PRESET: &str = include_str!("../presets/desk.toml");
const FULL_PRESET: &str = include_str!("../presets/full.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPreset {
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolvePreset {
    pub population: usize,
    pub t_interp0: usize,
    pub step: usize,
    pub generations: usize,
}

/// Everything a run needs besides data and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub image_size: usize,
    pub schedule: ScheduleParams,
    pub model: ArchConfig,
    pub data: DataPreset,
    pub train: TrainConfig,
    pub exp1: TrajectoryPcaConfig,
    pub exp2: LambdaSweepConfig,
    pub exp3: DiversitySweepConfig,
    pub evolve: EvolvePreset,
}

impl Preset {
    /// `desk`, `full`, or a path to a TOML file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        let text = match name_or_path {
            "desk" => DESK_PRESET.to_string(),
            "full" => FULL_PRESET.to_string(),
            path => std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
        };
        toml::from_str(&text).map_err(|e| Error::Config(format!("preset {name_or_path}: {e}")))
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [1, self.image_size, self.image_size]
    }

    pub fn load_train(&self, dir: &Path) -> Result<ImageDataset> {
        let s = self.image_size;
        load_idx(
            dir.join(&self.data.train_images),
            dir.join(&self.data.train_labels),
            self.data.label,
            (s, s),
        )
    }

    pub fn load_test(&self, dir: &Path) -> Result<ImageDataset> {
        let s = self.image_size;
        load_idx(
            dir.join(&self.data.test_images),
            dir.join(&self.data.test_labels),
            self.data.label,
            (s, s),
        )
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "dxo",
    version,
    about = "Diffusion crossover: evolve images through their noise"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Preset name (desk, full) or TOML path.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train the noise predictor.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding the preset's IDX files.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint that carries optimizer state.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Draw samples and store their genotypes.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long)]
        snapshot_stride: Option<usize>,
    },
    /// Cross two stored genotypes.
    Crossover {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        parent_a: PathBuf,
        #[arg(long)]
        parent_b: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        t_interp: usize,
        #[arg(long, default_value_t = 1)]
        n: usize,
    },
    /// PCA of reverse-process trajectories and a λ sweep between two parents.
    Exp1 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        t_interp: Option<usize>,
        /// Number of standard trajectories.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        snapshot_stride: Option<usize>,
    },
    /// Distance of offspring to each parent as λ varies.
    Exp2 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        t_interp: Option<usize>,
        /// Offspring per λ.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Offspring diversity as t_interp varies.
    Exp3 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        /// Offspring per t_interp.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Scripted selection towards a held-out target.
    EvolveHeadless {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Index of the target among the held-out images (default: seed).
        #[arg(long)]
        target: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        t_interp: Option<usize>,
    },
    /// HTTP API for interactive sessions.
    Serve {
        #[command(flatten)]
        common: Common,
        /// One or more checkpoints; the file stem is the model id.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, env = "DXO_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "DXO_HOST", default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        t_interp: Option<usize>,
        #[arg(long)]
        s: Option<usize>,
    },
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Comment lines recording the seed and configuration.
fn header(command: &str, seed: u64, config: &impl Serialize) -> Result<String> {
    Ok(format!(
        "# dxo {command} {}\n# seed={seed}\n# config={}\n",
        env!("CARGO_PKG_VERSION"),
        serde_json::to_string(config)?
    ))
}

fn load_model(path: &Path) -> Result<(DenoiserModel, NoiseSchedule)> {
    let ck = dataio::load_checkpoint(path)?;
    Ok((ck.model, ck.schedule))
}

fn cmd_train(
    common: &Common,
    data: &Path,
    epochs: Option<usize>,
    resume: Option<&Path>,
) -> Result<()> {
    let preset = Preset::load(&common.preset)?;
    let mut cfg = preset.train.clone();
    cfg.seed = common.seed;
    if let Some(e) = epochs {
        cfg.epochs = e;
        cfg.checkpoint_interval = cfg.checkpoint_interval.min(e.max(1));
    }
    create_out(&common.out)?;
    let (mut model, sched, mut trainer) = match resume {
        Some(p) => {
            let ck = dataio::load_checkpoint(p)?;
            let mut t = ck
                .trainer
                .ok_or_else(|| Error::Load(format!("{} has no optimizer state", p.display())))?;
            t.config.epochs = cfg.epochs;
            t.config.checkpoint_interval = cfg.checkpoint_interval;
            (ck.model, ck.schedule, t)
        }
        None => {
            let model = DenoiserModel::new(preset.model.clone(), preset.image_shape(), cfg.seed)?;
            let sched = NoiseSchedule::from_params(preset.schedule)?;
            let t = Trainer::new(cfg.clone(), &model)?;
            (model, sched, t)
        }
    };
    let ds = preset.load_train(data)?;
    log::info!(
        "training on {} images ({} epochs)",
        ds.len(),
        trainer.config.epochs
    );
    if trainer.config.epochs == 0 {
        dataio::save_checkpoint(
            &model,
            &sched,
            Some(&trainer),
            common.out.join("model.ckpt"),
        )?;
    }
    let out = common.out.clone();
    trainer.run(&mut model, &ds.images, &sched, |ev| {
        match ev {
            TrainEvent::Epoch(l) => log::info!("epoch {} mean loss {:.5}", l.epoch, l.mean_loss),
            TrainEvent::Checkpoint {
                epoch,
                model,
                trainer,
            } => {
                dataio::save_checkpoint(
                    model,
                    &sched,
                    Some(trainer),
                    out.join(format!("checkpoint-e{epoch}.ckpt")),
                )?;
                dataio::save_checkpoint(model, &sched, Some(trainer), out.join("model.ckpt"))?;
            }
        }
        Ok(())
    })?;
    let csv = header("train", common.seed, &trainer.config)? + &loss_history_csv(&trainer.history);
    write(common.out.join("loss.csv"), &csv)
}

fn cmd_sample(common: &Common, checkpoint: &Path, n: usize, stride: Option<usize>) -> Result<()> {
    let (model, sched) = load_model(checkpoint)?;
    create_out(&common.out)?;
    let opts = SampleOptions {
        snapshot_stride: stride,
        ..SampleOptions::default()
    };
    let mut stats = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let x = Tensor::randn(
            &model.image_shape(),
            &mut rng::stream(common.seed, Purpose::InitialNoise, &[i]),
        );
        let g = generate(
            &model,
            &sched,
            &x,
            None,
            opts,
            &mut rng::stream(common.seed, Purpose::Mutation, &[0, i]),
        )?;
        dataio::export_png(&g.x0, common.out.join(format!("sample-{i:03}.png")))?;
        dataio::save_genotype(&g.genotype, common.out.join(format!("sample-{i:03}.geno")))?;
        if let Some(tr) = &g.trajectory {
            for (t, x) in &tr.snapshots {
                dataio::export_png(x, common.out.join(format!("sample-{i:03}-t{t:04}.png")))?;
            }
        }
        stats.push(g.x0.clamp(-1.0, 1.0));
    }
    let (mean, std) = pixel_stats(&stats);
    println!("{n} samples, pixel mean {mean:.4}, std {std:.4}");
    Ok(())
}

fn cmd_crossover(
    common: &Common,
    checkpoint: &Path,
    a: &Path,
    b: &Path,
    lambda: f64,
    t_interp: usize,
    n: usize,
) -> Result<()> {
    let (model, sched) = load_model(checkpoint)?;
    let expect = Some((&model.image_shape()[..], sched.steps()));
    let ga = dataio::load_genotype(a, expect)?;
    let gb = dataio::load_genotype(b, expect)?;
    let (x_t, inj) = crossover(&ga, &gb, &CrossoverParams::new(lambda, t_interp))?;
    create_out(&common.out)?;
    let opts = SampleOptions {
        t_interp,
        ..SampleOptions::default()
    };
    for k in 0..n as u64 {
        let mut r = rng::stream(common.seed, Purpose::Mutation, &[1, k]);
        let g = generate(&model, &sched, &x_t, Some(&inj), opts, &mut r)?;
        dataio::export_png(&g.x0, common.out.join(format!("child-{k:03}.png")))?;
        dataio::save_genotype(&g.genotype, common.out.join(format!("child-{k:03}.geno")))?;
    }
    Ok(())
}

fn cmd_exp1(
    common: &Common,
    checkpoint: &Path,
    t_interp: Option<usize>,
    n: Option<usize>,
    stride: Option<usize>,
) -> Result<()> {
    let preset = Preset::load(&common.preset)?;
    let (model, sched) = load_model(checkpoint)?;
    let mut cfg = preset.exp1.clone();
    cfg.seed = common.seed;
    if let Some(t) = t_interp {
        cfg.t_interp_fraction = t as f64 / sched.steps() as f64;
    }
    cfg.images = n.unwrap_or(cfg.images);
    cfg.snapshot_stride = stride.unwrap_or(cfg.snapshot_stride);
    let r = trajectory_pca(&model, &sched, &cfg)?;
    create_out(&common.out)?;
    let head = header("exp1", common.seed, &cfg)?;
    write(common.out.join("exp1_pca.csv"), &(head.clone() + &r.csv()))?;
    let mut sweep = String::from("lambda,final_pc1\n");
    for (l, p) in &r.final_pc1 {
        sweep.push_str(&format!("{l},{p}\n"));
    }
    write(common.out.join("exp1_final_pc1.csv"), &(head + &sweep))?;
    let report = serde_json::json!({
        "seed": common.seed,
        "config": cfg,
        "parent_a": r.parent_a,
        "parent_b": r.parent_b,
        "explained_variance_ratio": r.explained_variance_ratio,
        "lambda_vs_final_pc1": r.report,
    });
    write(
        common.out.join("exp1_report.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "rho(lambda, final PC1) = {:.3}, p = {:.3e}",
        r.report.rho, r.report.p_value
    );
    Ok(())
}

fn cmd_exp2(
    common: &Common,
    checkpoint: &Path,
    t_interp: Option<usize>,
    n: Option<usize>,
) -> Result<()> {
    let preset = Preset::load(&common.preset)?;
    let (model, sched) = load_model(checkpoint)?;
    let mut cfg = preset.exp2.clone();
    cfg.seed = common.seed;
    if let Some(t) = t_interp {
        cfg.t_interp_fraction = t as f64 / sched.steps() as f64;
    }
    cfg.offspring_per_lambda = n.unwrap_or(cfg.offspring_per_lambda);
    let r = lambda_sweep(&model, &sched, &cfg, &ProxyDistance::default())?;
    create_out(&common.out)?;
    write(
        common.out.join("exp2_distances.csv"),
        &(header("exp2", common.seed, &cfg)? + &r.csv()),
    )?;
    let report = serde_json::json!({
        "seed": common.seed,
        "config": cfg,
        "t_interp": r.t_interp,
        "dist_to_A": r.rho_a,
        "dist_to_B": r.rho_b,
    });
    write(
        common.out.join("exp2_report.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    dataio::export_png(&r.parent_a, common.out.join("parent-a.png"))?;
    dataio::export_png(&r.parent_b, common.out.join("parent-b.png"))?;
    for (i, kids) in r.images.iter().enumerate() {
        dataio::export_png(&kids[0], common.out.join(format!("lambda-{i}.png")))?;
    }
    println!(
        "rho(lambda, d_A) = {:.3} (p = {:.3e}); rho(lambda, d_B) = {:.3} (p = {:.3e})",
        r.rho_a.rho, r.rho_a.p_value, r.rho_b.rho, r.rho_b.p_value
    );
    Ok(())
}

fn cmd_exp3(
    common: &Common,
    checkpoint: &Path,
    lambda: Option<f64>,
    n: Option<usize>,
) -> Result<()> {
    let preset = Preset::load(&common.preset)?;
    let (model, sched) = load_model(checkpoint)?;
    let mut cfg = preset.exp3.clone();
    cfg.seed = common.seed;
    cfg.lambda = lambda.unwrap_or(cfg.lambda);
    cfg.offspring = n.unwrap_or(cfg.offspring);
    let r = diversity_sweep(&model, &sched, &cfg, &ProxyDistance::default())?;
    create_out(&common.out)?;
    write(
        common.out.join("exp3_diversity.csv"),
        &(header("exp3", common.seed, &cfg)? + &r.csv()),
    )?;
    let report = serde_json::json!({
        "seed": common.seed,
        "config": cfg,
        "t_interp_vs_diversity": r.report,
        "deepest_is_least_diverse": r.deepest_is_least_diverse(),
    });
    write(
        common.out.join("exp3_report.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "rho(t_interp, diversity) = {:.3}, p = {:.3e}",
        r.report.rho, r.report.p_value
    );
    Ok(())
}

fn cmd_evolve(
    common: &Common,
    checkpoint: &Path,
    data: &Path,
    target: Option<usize>,
    n: Option<usize>,
    t_interp: Option<usize>,
) -> Result<()> {
    let preset = Preset::load(&common.preset)?;
    let (model, sched) = load_model(checkpoint)?;
    let test = preset.load_test(data)?;
    if test.is_empty() {
        return Err(Error::Argument(
            "no held-out images to use as a target".into(),
        ));
    }
    let idx = target.unwrap_or(common.seed as usize) % test.len();
    let cfg = HeadlessConfig {
        evolution: EvolutionConfig {
            population_size: n.unwrap_or(preset.evolve.population),
            t_interp0: t_interp.unwrap_or(preset.evolve.t_interp0),
            step: preset.evolve.step,
            seed: common.seed,
            lambda: LambdaPolicy::Uniform,
            ..EvolutionConfig::default()
        },
        generations: preset.evolve.generations,
    };
    create_out(&common.out)?;
    let mut log = RunLog::create(common.out.join("run.jsonl"))?;
    let id = checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let run = run_headless(
        &model,
        &sched,
        &cfg,
        &test.images[idx],
        &ProxyDistance::default(),
        Some((&mut log, &id)),
    )?;
    let mut csv = header("evolve-headless", common.seed, &cfg.evolution)?;
    csv.push_str(&format!("# target_index={idx}\ngeneration,best_distance\n"));
    for (g, d) in run.best_distance.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", g + 1, d));
    }
    write(common.out.join("evolve_best.csv"), &csv)?;
    dataio::export_png(&test.images[idx], common.out.join("target.png"))?;
    for ind in &run.session.population {
        dataio::export_png(&ind.image, common.out.join(format!("final-{}.png", ind.id)))?;
    }
    println!(
        "best distance: generation 1 {:.4} -> generation {} {:.4}",
        run.best_distance[0],
        run.best_distance.len(),
        run.best_distance[run.best_distance.len() - 1]
    );
    Ok(())
}

fn cmd_serve(
    common: &Common,
    checkpoints: &[PathBuf],
    addr: SocketAddr,
    n: Option<usize>,
    t_interp: Option<usize>,
    s: Option<usize>,
) -> Result<()> {
    let mut models = BTreeMap::new();
    for path in checkpoints {
        let (model, schedule) = load_model(path)?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        models.insert(id, ModelEntry { model, schedule });
    }
    let defaults = ServerConfig::default();
    create_out(&common.out)?;
    let config = ServerConfig {
        default_population: n.unwrap_or(defaults.default_population),
        default_t_interp0: t_interp.unwrap_or(defaults.default_t_interp0),
        default_step: s.unwrap_or(defaults.default_step),
        log_dir: Some(common.out.clone()),
    };
    let state = server::AppState::new(config, models);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    rt.block_on(server::serve(addr, state))
        .map_err(|e| Error::io(addr.to_string(), e))
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train {
            common,
            data,
            epochs,
            checkpoint,
        } => cmd_train(common, data, *epochs, checkpoint.as_deref()),
        Command::Sample {
            common,
            checkpoint,
            n,
            snapshot_stride,
        } => cmd_sample(common, checkpoint, *n, *snapshot_stride),
        Command::Crossover {
            common,
            checkpoint,
            parent_a,
            parent_b,
            lambda,
            t_interp,
            n,
        } => cmd_crossover(
            common, checkpoint, parent_a, parent_b, *lambda, *t_interp, *n,
        ),
        Command::Exp1 {
            common,
            checkpoint,
            t_interp,
            n,
            snapshot_stride,
        } => cmd_exp1(common, checkpoint, *t_interp, *n, *snapshot_stride),
        Command::Exp2 {
            common,
            checkpoint,
            t_interp,
            n,
        } => cmd_exp2(common, checkpoint, *t_interp, *n),
        Command::Exp3 {
            common,
            checkpoint,
            lambda,
            n,
        } => cmd_exp3(common, checkpoint, *lambda, *n),
        Command::EvolveHeadless {
            common,
            checkpoint,
            data,
            target,
            n,
            t_interp,
        } => cmd_evolve(common, checkpoint, data, *target, *n, *t_interp),
        Command::Serve {
            common,
            checkpoint,
            port,
            host,
            n,
            t_interp,
            s,
        } => {
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| Error::Argument(format!("bad listen address: {e}")))?;
            cmd_serve(common, checkpoint, addr, *n, *t_interp, *s)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_presets_parse() {
        let desk = Preset::load("desk").unwrap();
        assert_eq!(desk.schedule.steps, 200);
        assert!(desk.train.augment.is_some());
        desk.train.validate().unwrap();
        let full = Preset::load("full").unwrap();
        assert_eq!(full.schedule.steps, 1000);
        assert_eq!(full.train.batch_size, 64);
        assert!(Preset::load("/nonexistent.toml").is_err());
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "dxo",
            "exp2",
            "--checkpoint",
            "m.ckpt",
            "--seed",
            "3",
            "--t-interp",
            "120",
            "--preset",
            "desk",
            "--out",
            "o",
        ])
        .unwrap();
        assert!(matches!(
            cli.command,
            Command::Exp2 {
                t_interp: Some(120),
                ..
            }
        ));
        assert!(Cli::try_parse_from(["dxo", "evolve-headless", "--checkpoint", "m"]).is_err());
    }
}

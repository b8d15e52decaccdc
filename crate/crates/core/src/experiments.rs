//! Batch harnesses: trajectory PCA, λ sweep, diversity sweep and headless evolution.

use serde::{Deserialize, Serialize};

use crate::dataio::{RunEvent, RunLog};
use crate::denoiser::DenoiserModel;
use crate::error::{Error, Result};
use crate::evolution::{scripted_selector, EvolutionConfig, EvolutionSession};
use crate::genome::{crossover, CrossoverParams};
use crate::metrics::{diversity_score, spearman, CorrelationReport, Pca, PerceptualMetric};
use crate::rng::{self, Purpose, StreamRng};
use crate::sampler::{generate, Generated, InjectedNoise, ReverseState, SampleOptions};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// λ = 0.1, 0.2, ..., 0.9.
pub fn default_lambdas() -> Vec<f64> {
    (1..=9).map(|i| f64::from(i) / 10.0).collect()
}

/// 0.1T, 0.2T, ..., 0.9T (rounded).
pub fn default_t_interps(steps: usize) -> Vec<usize> {
    (1..=9).map(|i| (steps * i + 5) / 10).collect()
}

fn fraction_of(steps: usize, f: f64) -> usize {
    ((steps as f64) * f).round() as usize
}

/// Images as they would be exported: clamped to [-1, 1].
fn visible(x: &Tensor) -> Tensor {
    x.clamp(-1.0, 1.0)
}

/// Two parents drawn from independent initial noise.
fn parents(
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    seed: u64,
    stride: Option<usize>,
) -> Result<(Generated, Generated)> {
    let shape = model.image_shape();
    let opts = SampleOptions {
        snapshot_stride: stride,
        ..SampleOptions::default()
    };
    let make = |k: u64| {
        let x = Tensor::randn(&shape, &mut rng::stream(seed, Purpose::InitialNoise, &[k]));
        generate(
            model,
            sched,
            &x,
            None,
            opts,
            &mut rng::stream(seed, Purpose::Mutation, &[0, k]),
        )
    };
    Ok((make(0)?, make(1)?))
}

/// Runs the shared injected prefix once and finishes one sample per rng.
fn offspring(
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    x_t: &Tensor,
    injected: &InjectedNoise,
    opts: SampleOptions,
    rngs: &mut [StreamRng],
) -> Result<Vec<Generated>> {
    crate::sampler::generate_branched(model, sched, x_t, Some(injected), opts, rngs)
}

fn mutation_streams(seed: u64, group: u64, count: usize) -> Vec<StreamRng> {
    (0..count as u64)
        .map(|k| rng::stream(seed, Purpose::Experiment, &[group, k]))
        .collect()
}

// ---------------------------------------------------------------------------
// λ sweep: distance to each parent

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweepConfig {
    /// Injection depth as a fraction of T.
    pub t_interp_fraction: f64,
    pub lambdas: Vec<f64>,
    pub offspring_per_lambda: usize,
    pub seed: u64,
    /// Swap the roles of the two parents.
    #[serde(default)]
    pub swap_parents: bool,
}

impl Default for LambdaSweepConfig {
    fn default() -> Self {
        Self {
            t_interp_fraction: 0.6,
            lambdas: default_lambdas(),
            offspring_per_lambda: 4,
            seed: 0,
            swap_parents: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub dist_to_a: f64,
    pub dist_to_b: f64,
}

#[derive(Clone, Debug)]
pub struct LambdaSweep {
    pub t_interp: usize,
    pub rows: Vec<LambdaRow>,
    pub rho_a: CorrelationReport,
    pub rho_b: CorrelationReport,
    pub parent_a: Tensor,
    pub parent_b: Tensor,
    /// Offspring images per λ.
    pub images: Vec<Vec<Tensor>>,
}

impl LambdaSweep {
    pub fn csv(&self) -> String {
        let mut s = String::from("lambda,dist_to_A,dist_to_B\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.lambda, r.dist_to_a, r.dist_to_b));
        }
        s
    }
}

pub fn lambda_sweep(
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    cfg: &LambdaSweepConfig,
    metric: &dyn PerceptualMetric,
) -> Result<LambdaSweep> {
    if cfg.offspring_per_lambda == 0 || cfg.lambdas.is_empty() {
        return Err(Error::Config(
            "need at least one λ and one offspring per λ".into(),
        ));
    }
    let t_interp = fraction_of(sched.steps(), cfg.t_interp_fraction).min(sched.steps());
    let (mut a, mut b) = parents(model, sched, cfg.seed, None)?;
    if cfg.swap_parents {
        std::mem::swap(&mut a, &mut b);
    }
    let (img_a, img_b) = (visible(&a.x0), visible(&b.x0));
    let opts = SampleOptions {
        t_interp,
        ..SampleOptions::default()
    };
    let mut rows = Vec::with_capacity(cfg.lambdas.len());
    let mut images = Vec::with_capacity(cfg.lambdas.len());
    for (i, &lambda) in cfg.lambdas.iter().enumerate() {
        let (x_t, inj) = crossover(
            &a.genotype,
            &b.genotype,
            &CrossoverParams::new(lambda, t_interp),
        )?;
        let mut rngs = mutation_streams(cfg.seed, i as u64, cfg.offspring_per_lambda);
        let kids = offspring(model, sched, &x_t, &inj, opts, &mut rngs)?;
        let kids: Vec<Tensor> = kids.iter().map(|g| visible(&g.x0)).collect();
        let mut da = 0.0;
        let mut db = 0.0;
        for k in &kids {
            da += metric.distance(k, &img_a)?;
            db += metric.distance(k, &img_b)?;
        }
        let n = kids.len() as f64;
        rows.push(LambdaRow {
            lambda,
            dist_to_a: da / n,
            dist_to_b: db / n,
        });
        images.push(kids);
    }
    let ls: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    let rho_a = spearman(&ls, &rows.iter().map(|r| r.dist_to_a).collect::<Vec<_>>())?;
    let rho_b = spearman(&ls, &rows.iter().map(|r| r.dist_to_b).collect::<Vec<_>>())?;
    Ok(LambdaSweep {
        t_interp,
        rows,
        rho_a,
        rho_b,
        parent_a: img_a,
        parent_b: img_b,
        images,
    })
}

// ---------------------------------------------------------------------------
// t_interp sweep: offspring diversity

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversitySweepConfig {
    /// Injection depths as fractions of T.
    pub t_interp_fractions: Vec<f64>,
    pub lambda: f64,
    pub offspring: usize,
    pub seed: u64,
}

impl Default for DiversitySweepConfig {
    fn default() -> Self {
        Self {
            t_interp_fractions: (1..=9).map(|i| f64::from(i) / 10.0).collect(),
            lambda: 0.5,
            offspring: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityRow {
    pub t_interp: usize,
    pub diversity: f64,
}

#[derive(Clone, Debug)]
pub struct DiversitySweep {
    pub rows: Vec<DiversityRow>,
    pub report: CorrelationReport,
}

impl DiversitySweep {
    pub fn csv(&self) -> String {
        let mut s = String::from("t_interp,diversity\n");
        for r in &self.rows {
            s.push_str(&format!("{},{}\n", r.t_interp, r.diversity));
        }
        s
    }

    /// Whether the deepest injection gives the least diverse offspring.
    pub fn deepest_is_least_diverse(&self) -> bool {
        let deepest = self.rows.iter().max_by_key(|r| r.t_interp);
        let least = self
            .rows
            .iter()
            .min_by(|a, b| a.diversity.total_cmp(&b.diversity));
        matches!((deepest, least), (Some(d), Some(l)) if d.t_interp == l.t_interp)
    }
}

/// The interpolated noise does not depend on t_interp, so one reverse pass
/// over the deepest prefix serves every row: each row branches off it.
pub fn diversity_sweep(
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    cfg: &DiversitySweepConfig,
    metric: &dyn PerceptualMetric,
) -> Result<DiversitySweep> {
    if cfg.offspring < 2 {
        return Err(Error::Config("diversity needs at least 2 offspring".into()));
    }
    let steps = sched.steps();
    let mut t_interps: Vec<usize> = cfg
        .t_interp_fractions
        .iter()
        .map(|&f| fraction_of(steps, f).min(steps))
        .collect();
    t_interps.sort_unstable();
    t_interps.dedup();
    let deepest = *t_interps
        .last()
        .ok_or_else(|| Error::Config("empty t_interp grid".into()))?;
    let (a, b) = parents(model, sched, cfg.seed, None)?;
    let (x_t, inj) = crossover(
        &a.genotype,
        &b.genotype,
        &CrossoverParams::new(cfg.lambda, deepest),
    )?;

    let mut prefix = ReverseState::new(model, sched, x_t, None, Default::default())?;
    let mut unused = rng::stream(cfg.seed, Purpose::Experiment, &[u64::MAX]);
    let mut rows = Vec::with_capacity(t_interps.len());
    for &t_interp in &t_interps {
        prefix.run(
            model,
            sched,
            Some(&inj),
            deepest,
            steps - t_interp,
            &mut unused,
        )?;
        let mut images = Vec::with_capacity(cfg.offspring);
        for mut r in mutation_streams(cfg.seed, t_interp as u64, cfg.offspring) {
            let mut s = prefix.clone();
            s.run(model, sched, None, 0, 0, &mut r)?;
            images.push(visible(&s.finish()?.x0));
        }
        rows.push(DiversityRow {
            t_interp,
            diversity: diversity_score(&images, metric)?,
        });
    }
    let report = spearman(
        &rows.iter().map(|r| r.t_interp as f64).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.diversity).collect::<Vec<_>>(),
    )?;
    Ok(DiversitySweep { rows, report })
}

// ---------------------------------------------------------------------------
// Trajectory PCA

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPcaConfig {
    pub images: usize,
    pub snapshot_stride: usize,
    pub t_interp_fraction: f64,
    pub lambdas: Vec<f64>,
    pub offspring_per_lambda: usize,
    pub seed: u64,
}

impl Default for TrajectoryPcaConfig {
    fn default() -> Self {
        Self {
            images: 50,
            snapshot_stride: 100,
            t_interp_fraction: 0.6,
            lambdas: default_lambdas(),
            offspring_per_lambda: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaRow {
    /// `standard` or `interpolated`.
    pub kind: String,
    pub index: usize,
    pub lambda: Option<f64>,
    /// Step of the snapshot; 0 for the final image.
    pub t: usize,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Clone, Debug)]
pub struct TrajectoryPca {
    pub rows: Vec<PcaRow>,
    pub parent_a: usize,
    pub parent_b: usize,
    pub explained_variance_ratio: Vec<f64>,
    /// `(λ, mean final-image PC1 over that λ's offspring)`.
    pub final_pc1: Vec<(f64, f64)>,
    pub report: CorrelationReport,
}

impl TrajectoryPca {
    pub fn csv(&self) -> String {
        let mut s = String::from("kind,index,lambda,t,pc1,pc2\n");
        for r in &self.rows {
            let l = r.lambda.map(|l| l.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.kind, r.index, l, r.t, r.pc1, r.pc2
            ));
        }
        s
    }
}

fn flatten(x: &Tensor) -> Vec<f64> {
    x.data().iter().map(|&v| f64::from(v)).collect()
}

/// Snapshot points of a trajectory, final image last as `t = 0`.
fn trajectory_points(g: &Generated) -> Vec<(usize, Vec<f64>)> {
    let tr = g.trajectory.as_ref().expect("snapshots requested");
    tr.snapshots
        .iter()
        .map(|(t, x)| (*t, flatten(x)))
        .chain(std::iter::once((0, flatten(&tr.final_image))))
        .collect()
}

pub fn trajectory_pca(
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    cfg: &TrajectoryPcaConfig,
) -> Result<TrajectoryPca> {
    if cfg.images < 2 {
        return Err(Error::Config(
            "trajectory PCA needs at least 2 images".into(),
        ));
    }
    let steps = sched.steps();
    let shape = model.image_shape();
    let stride = Some(cfg.snapshot_stride);
    let opts = SampleOptions {
        snapshot_stride: stride,
        ..SampleOptions::default()
    };
    let standard = (0..cfg.images as u64)
        .map(|i| {
            let x = Tensor::randn(
                &shape,
                &mut rng::stream(cfg.seed, Purpose::InitialNoise, &[i]),
            );
            generate(
                model,
                sched,
                &x,
                None,
                opts,
                &mut rng::stream(cfg.seed, Purpose::Mutation, &[0, i]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let traj: Vec<Vec<(usize, Vec<f64>)>> = standard.iter().map(trajectory_points).collect();
    let all: Vec<Vec<f64>> = traj.iter().flatten().map(|(_, p)| p.clone()).collect();
    let pca = Pca::fit(&all, 2)?;

    let mut rows = Vec::new();
    let mut final_pc1 = Vec::with_capacity(cfg.images);
    for (i, tr) in traj.iter().enumerate() {
        for (t, p) in tr {
            let c = pca.transform_one(p)?;
            if *t == 0 {
                final_pc1.push((c[0], i));
            }
            rows.push(PcaRow {
                kind: "standard".into(),
                index: i,
                lambda: None,
                t: *t,
                pc1: c[0],
                pc2: c[1],
            });
        }
    }
    // parents: the two final images farthest apart along PC1
    let parent_a = final_pc1
        .iter()
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .expect("non-empty")
        .1;
    let parent_b = final_pc1
        .iter()
        .max_by(|x, y| x.0.total_cmp(&y.0))
        .expect("non-empty")
        .1;
    if parent_a == parent_b {
        return Err(Error::Degenerate(
            "all final images share one PC1 coordinate".into(),
        ));
    }

    let t_interp = fraction_of(steps, cfg.t_interp_fraction).min(steps);
    let iopts = SampleOptions { t_interp, ..opts };
    let mut sweep = Vec::with_capacity(cfg.lambdas.len());
    for (li, &lambda) in cfg.lambdas.iter().enumerate() {
        let (x_t, inj) = crossover(
            &standard[parent_a].genotype,
            &standard[parent_b].genotype,
            &CrossoverParams::new(lambda, t_interp),
        )?;
        let mut rngs = mutation_streams(cfg.seed, li as u64, cfg.offspring_per_lambda);
        let kids = offspring(model, sched, &x_t, &inj, iopts, &mut rngs)?;
        let mut pc1_sum = 0.0;
        for (k, g) in kids.iter().enumerate() {
            for (t, p) in trajectory_points(g) {
                let c = pca.transform_one(&p)?;
                if t == 0 {
                    pc1_sum += c[0];
                }
                rows.push(PcaRow {
                    kind: "interpolated".into(),
                    index: li * cfg.offspring_per_lambda + k,
                    lambda: Some(lambda),
                    t,
                    pc1: c[0],
                    pc2: c[1],
                });
            }
        }
        sweep.push((lambda, pc1_sum / kids.len() as f64));
    }
    let report = spearman(
        &sweep.iter().map(|s| s.0).collect::<Vec<_>>(),
        &sweep.iter().map(|s| s.1).collect::<Vec<_>>(),
    )?;
    Ok(TrajectoryPca {
        rows,
        parent_a,
        parent_b,
        explained_variance_ratio: pca.explained_variance_ratio(),
        final_pc1: sweep,
        report,
    })
}

// ---------------------------------------------------------------------------
// Headless evolution

#[derive(Clone, Debug)]
pub struct HeadlessRun {
    /// Best (smallest) distance to the target in each generation, generation 1 first.
    pub best_distance: Vec<f64>,
    pub session: EvolutionSession,
}

impl HeadlessRun {
    pub fn improved(&self) -> bool {
        matches!((self.best_distance.first(), self.best_distance.last()), (Some(a), Some(b)) if b < a)
    }
}

fn best_distance(
    s: &EvolutionSession,
    target: &Tensor,
    metric: &dyn PerceptualMetric,
) -> Result<f64> {
    s.population
        .iter()
        .map(|i| metric.distance(&visible(&i.image), target))
        .try_fold(f64::INFINITY, |acc, d| Ok(acc.min(d?)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadlessConfig {
    pub evolution: EvolutionConfig,
    /// Generations to run, counting the first.
    pub generations: usize,
}

/// Lets the scripted selector pick the two individuals closest to `target`
/// each generation. `log` takes the run log and the model id it records.
pub fn run_headless(
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    config: &HeadlessConfig,
    target: &Tensor,
    metric: &dyn PerceptualMetric,
    mut log: Option<(&mut RunLog, &str)>,
) -> Result<HeadlessRun> {
    if config.generations == 0 {
        return Err(Error::Config("need at least one generation".into()));
    }
    let target = visible(target);
    let evo = config.evolution.clone();
    let mut session = EvolutionSession::init(format!("headless-{}", evo.seed), model, sched, evo)?;
    if let Some((l, id)) = log.as_mut() {
        l.append(&RunEvent::created(&session, id, model, sched))?;
    }
    let mut best = vec![best_distance(&session, &target, metric)?];
    for _ in 1..config.generations {
        let (a, b) = scripted_selector(&session.population, &target, metric)?;
        if let Some((l, _)) = log.as_mut() {
            l.append(&RunEvent::SelectionMade {
                generation: session.generation,
                parent_a: a,
                parent_b: b,
            })?;
        }
        session.step_generation(a, b, model, sched)?;
        if let Some((l, _)) = log.as_mut() {
            l.append(&RunEvent::stepped(&session))?;
        }
        best.push(best_distance(&session, &target, metric)?);
    }
    Ok(HeadlessRun {
        best_distance: best,
        session,
    })
}

//! Generational search over noise genotypes driven by two-parent selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserModel;
use crate::error::{Error, Result};
use crate::genome::{crossover, CrossoverParams, DEFAULT_PARALLEL_EPSILON};
use crate::metrics::PerceptualMetric;
use crate::rng::{self, Purpose};
use crate::sampler::{generate, FinalStepNoise, Genotype, SampleOptions};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

pub type IndividualId = u64;

#[derive(Clone, Debug)]
pub struct Individual {
    pub id: IndividualId,
    pub image: Tensor,
    pub genotype: Genotype,
    pub generation: usize,
    pub parent_ids: Option<(IndividualId, IndividualId)>,
    pub lambda_used: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum LambdaPolicy {
    /// λ ~ U(0,1) per offspring.
    Uniform,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub t_interp0: usize,
    pub step: usize,
    pub seed: u64,
    pub lambda: LambdaPolicy,
    /// Carry both parents into the next population (in place of the last two offspring).
    pub keep_parents: bool,
    pub final_step: FinalStepNoise,
    pub parallel_epsilon: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population_size: 10,
            t_interp0: 100,
            step: 100,
            seed: 0,
            lambda: LambdaPolicy::Uniform,
            keep_parents: false,
            final_step: FinalStepNoise::Zero,
            parallel_epsilon: DEFAULT_PARALLEL_EPSILON,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Config(format!(
                "population size must be at least 2, got {}",
                self.population_size
            )));
        }
        if self.keep_parents && self.population_size < 3 {
            return Err(Error::Config(
                "keeping parents needs a population of at least 3".into(),
            ));
        }
        if let LambdaPolicy::Fixed(l) = self.lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::Config(format!("fixed lambda {l} outside [0,1]")));
            }
        }
        if !(self.parallel_epsilon.is_finite() && self.parallel_epsilon > 0.0) {
            return Err(Error::Config("parallel_epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// Generation the parents were picked from.
    pub generation: usize,
    pub parents: (IndividualId, IndividualId),
    pub t_interp: usize,
    pub offspring: Vec<IndividualId>,
}

#[derive(Clone, Debug)]
pub struct EvolutionSession {
    pub id: String,
    pub config: EvolutionConfig,
    pub population: Vec<Individual>,
    /// Injection depth the next step will use.
    pub t_interp: usize,
    pub generation: usize,
    pub history: Vec<HistoryEntry>,
    next_id: IndividualId,
}

impl EvolutionSession {
    /// First generation: iid initial noise, no injection.
    pub fn init(
        id: impl Into<String>,
        model: &DenoiserModel,
        sched: &NoiseSchedule,
        config: EvolutionConfig,
    ) -> Result<Self> {
        config.validate()?;
        let shape = model.image_shape();
        let opts = SampleOptions {
            final_step: config.final_step,
            ..SampleOptions::default()
        };
        let population = (0..config.population_size)
            .map(|i| {
                let mut init = rng::stream(config.seed, Purpose::InitialNoise, &[i as u64]);
                let x_t = Tensor::randn(&shape, &mut init);
                let mut mutation = rng::stream(config.seed, Purpose::Mutation, &[1, i as u64]);
                let g = generate(model, sched, &x_t, None, opts, &mut mutation)?;
                Ok(Individual {
                    id: i as IndividualId,
                    image: g.x0,
                    genotype: g.genotype,
                    generation: 1,
                    parent_ids: None,
                    lambda_used: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            id: id.into(),
            t_interp: config.t_interp0.min(sched.steps()),
            next_id: config.population_size as IndividualId,
            config,
            population,
            generation: 1,
            history: Vec::new(),
        })
    }

    pub fn individual(&self, id: IndividualId) -> Option<&Individual> {
        self.population.iter().find(|i| i.id == id)
    }

    /// Checks a parent pair against the current population.
    pub fn check_selection(&self, a: IndividualId, b: IndividualId) -> Result<()> {
        if a == b {
            return Err(Error::Selection(format!(
                "parents must differ (both are {a})"
            )));
        }
        for id in [a, b] {
            if self.individual(id).is_none() {
                return Err(Error::Selection(format!(
                    "individual {id} is not in generation {}",
                    self.generation
                )));
            }
        }
        Ok(())
    }

    /// λ values for the next generation's offspring.
    fn draw_lambdas(&self, generation: usize) -> Vec<f64> {
        let mut r = rng::stream(self.config.seed, Purpose::Lambda, &[generation as u64]);
        (0..self.config.population_size)
            .map(|_| match self.config.lambda {
                LambdaPolicy::Uniform => r.random::<f64>(),
                LambdaPolicy::Fixed(l) => l,
            })
            .collect()
    }

    /// Breeds the next generation from parents `a` and `b`. On error the
    /// session is left untouched.
    pub fn step_generation(
        &mut self,
        a: IndividualId,
        b: IndividualId,
        model: &DenoiserModel,
        sched: &NoiseSchedule,
    ) -> Result<()> {
        self.check_selection(a, b)?;
        let pa = self.individual(a).expect("checked");
        let pb = self.individual(b).expect("checked");
        let next_gen = self.generation + 1;
        let t_interp = self.t_interp.min(sched.steps());
        let n = self.config.population_size;
        let n_children = if self.config.keep_parents { n - 2 } else { n };
        let lambdas = self.draw_lambdas(next_gen);
        let opts = SampleOptions {
            t_interp,
            snapshot_stride: None,
            final_step: self.config.final_step,
        };
        let mut offspring = Vec::with_capacity(n);
        for (k, &lambda) in lambdas.iter().enumerate().take(n_children) {
            let params = CrossoverParams {
                lambda,
                t_interp,
                parallel_epsilon: self.config.parallel_epsilon,
            };
            let (x_t, injected) = crossover(&pa.genotype, &pb.genotype, &params)?;
            let mut mutation = rng::stream(
                self.config.seed,
                Purpose::Mutation,
                &[next_gen as u64, k as u64],
            );
            let g = generate(model, sched, &x_t, Some(&injected), opts, &mut mutation)?;
            offspring.push(Individual {
                id: self.next_id + k as IndividualId,
                image: g.x0,
                genotype: g.genotype,
                generation: next_gen,
                parent_ids: Some((a, b)),
                lambda_used: Some(lambda),
            });
        }
        if self.config.keep_parents {
            offspring.push(pa.clone());
            offspring.push(pb.clone());
        }

        self.next_id += n_children as IndividualId;
        self.history.push(HistoryEntry {
            generation: self.generation,
            parents: (a, b),
            t_interp,
            offspring: offspring.iter().map(|i| i.id).collect(),
        });
        self.population = offspring;
        self.generation = next_gen;
        self.t_interp = (self.t_interp + self.config.step).min(sched.steps());
        Ok(())
    }

    /// Rebuilds a session from its configuration and the ordered parent picks.
    pub fn replay(
        id: impl Into<String>,
        model: &DenoiserModel,
        sched: &NoiseSchedule,
        config: EvolutionConfig,
        selections: &[(IndividualId, IndividualId)],
    ) -> Result<Self> {
        let mut s = Self::init(id, model, sched, config)?;
        for &(a, b) in selections {
            s.step_generation(a, b, model, sched)?;
        }
        Ok(s)
    }
}

/// The two individuals closest to `target`; ties go to the lower id.
pub fn scripted_selector(
    population: &[Individual],
    target: &Tensor,
    metric: &dyn PerceptualMetric,
) -> Result<(IndividualId, IndividualId)> {
    if population.len() < 2 {
        return Err(Error::Selection(format!(
            "need at least 2 individuals, population has {}",
            population.len()
        )));
    }
    let mut scored = population
        .iter()
        .map(|ind| {
            Ok((
                metric.distance(&ind.image.clamp(-1.0, 1.0), target)?,
                ind.id,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    Ok((scored[0].1, scored[1].1))
}

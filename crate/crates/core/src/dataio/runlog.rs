//! Line-delimited JSON log of an evolution session, enough to replay it.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserModel;
use crate::error::{Error, Result};
use crate::evolution::{EvolutionConfig, EvolutionSession, Individual, IndividualId};
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndividualRecord {
    pub id: IndividualId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_ids: Option<(IndividualId, IndividualId)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// CRC32 of the image's little-endian f32 bytes.
    pub image_crc32: u32,
}

impl IndividualRecord {
    pub fn of(ind: &Individual) -> Self {
        Self {
            id: ind.id,
            parent_ids: ind.parent_ids,
            lambda: ind.lambda_used,
            image_crc32: image_crc32(&ind.image),
        }
    }
}

pub fn image_crc32(x: &Tensor) -> u32 {
    let mut bytes = Vec::new();
    super::f32_to_le(x.data(), &mut bytes);
    crc32fast::hash(&bytes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RunEvent {
    SessionCreated {
        session_id: String,
        model: String,
        schedule: ScheduleParams,
        image_shape: [usize; 3],
        config: EvolutionConfig,
        population: Vec<IndividualRecord>,
    },
    SelectionMade {
        generation: usize,
        parent_a: IndividualId,
        parent_b: IndividualId,
    },
    GenerationStepped {
        generation: usize,
        t_interp: usize,
        population: Vec<IndividualRecord>,
    },
}

impl RunEvent {
    pub fn created(
        s: &EvolutionSession,
        model_id: &str,
        model: &DenoiserModel,
        sched: &NoiseSchedule,
    ) -> Self {
        RunEvent::SessionCreated {
            session_id: s.id.clone(),
            model: model_id.to_string(),
            schedule: sched.params(),
            image_shape: model.image_shape(),
            config: s.config.clone(),
            population: s.population.iter().map(IndividualRecord::of).collect(),
        }
    }

    /// Event for the generation just produced by `step_generation`.
    pub fn stepped(s: &EvolutionSession) -> Self {
        RunEvent::GenerationStepped {
            generation: s.generation,
            t_interp: s.history.last().map_or(0, |h| h.t_interp),
            population: s.population.iter().map(IndividualRecord::of).collect(),
        }
    }
}

/// Appends events, flushing after each line so an interrupted run leaves a
/// readable prefix.
pub struct RunLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RunLog {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path,
        })
    }

    pub fn append(&mut self, event: &RunEvent) -> Result<()> {
        let line = serde_json::to_string(event)?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn parse(text: &str) -> Result<Vec<RunEvent>> {
        let mut events = Vec::new();
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let complete = line.ends_with('\n');
            let body = line.trim();
            if !body.is_empty() {
                match serde_json::from_str(body) {
                    Ok(e) => events.push(e),
                    Err(_) if !complete => {
                        log::warn!("ignoring truncated final run-log line at byte {offset}");
                    }
                    Err(e) => return Err(Error::format("run log", offset, e.to_string())),
                }
            }
            offset += line.len() as u64;
        }
        Ok(events)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Vec<RunEvent>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn check_population(s: &EvolutionSession, expected: &[IndividualRecord]) -> Result<()> {
    let actual: Vec<IndividualRecord> = s.population.iter().map(IndividualRecord::of).collect();
    if actual != expected {
        return Err(Error::Load(format!(
            "replayed generation {} differs from the log",
            s.generation
        )));
    }
    Ok(())
}

/// Re-runs a logged session and checks every generation against the log.
pub fn replay_log(
    events: &[RunEvent],
    model: &DenoiserModel,
    sched: &NoiseSchedule,
) -> Result<EvolutionSession> {
    let mut it = events.iter();
    let mut session = match it.next() {
        Some(RunEvent::SessionCreated {
            session_id,
            config,
            schedule,
            population,
            ..
        }) => {
            if *schedule != sched.params() {
                return Err(Error::Load(
                    "log was recorded with a different schedule".into(),
                ));
            }
            let s = EvolutionSession::init(session_id.clone(), model, sched, config.clone())?;
            check_population(&s, population)?;
            s
        }
        _ => {
            return Err(Error::Load(
                "run log does not start with session_created".into(),
            ))
        }
    };
    let mut pending = None;
    for e in it {
        match e {
            RunEvent::SelectionMade {
                parent_a, parent_b, ..
            } => pending = Some((*parent_a, *parent_b)),
            RunEvent::GenerationStepped { population, .. } => {
                let (a, b) = pending
                    .take()
                    .ok_or_else(|| Error::Load("generation_stepped without a selection".into()))?;
                session.step_generation(a, b, model, sched)?;
                check_population(&session, population)?;
            }
            RunEvent::SessionCreated { .. } => {
                return Err(Error::Load("second session_created".into()))
            }
        }
    }
    Ok(session)
}

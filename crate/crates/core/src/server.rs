//! JSON-over-HTTP session service for interactive evolution.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::dataio::{encode_png, RunEvent, RunLog};
use crate::denoiser::{ArchConfig, DenoiserModel};
use crate::error::Error;
use crate::evolution::{EvolutionConfig, EvolutionSession, Individual, IndividualId, LambdaPolicy};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub default_population: usize,
    pub default_t_interp0: usize,
    pub default_step: usize,
    /// One JSON-lines log per session is written here when set.
    pub log_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            default_population: 10,
            default_t_interp0: 100,
            default_step: 100,
            log_dir: None,
        }
    }
}

pub struct ModelEntry {
    pub model: DenoiserModel,
    pub schedule: NoiseSchedule,
}

struct SessionSlot {
    model_id: String,
    session: RwLock<EvolutionSession>,
    /// Every image the session has produced, by individual id.
    archive: RwLock<BTreeMap<IndividualId, Tensor>>,
    busy: AtomicBool,
    log: Mutex<Option<RunLog>>,
}

pub struct AppState {
    config: ServerConfig,
    models: BTreeMap<String, Arc<ModelEntry>>,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
    next_session: AtomicU64,
}

impl AppState {
    pub fn new(config: ServerConfig, models: BTreeMap<String, ModelEntry>) -> Arc<Self> {
        Arc::new(Self {
            config,
            models: models.into_iter().map(|(k, v)| (k, Arc::new(v))).collect(),
            sessions: RwLock::new(HashMap::new()),
            next_session: AtomicU64::new(1),
        })
    }

    fn session(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id:?}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn not_found(message: String) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            code: "not_found",
            message,
        }
    }

    fn validation(message: String) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "validation_error",
            message,
        }
    }

    fn conflict(message: String) -> Self {
        Self {
            status: StatusCode::CONFLICT,
            code: "conflict",
            message,
        }
    }

    fn internal(message: String) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Argument(_) | Error::Selection(_) | Error::Shape { .. } => {
                ApiError::validation(e.to_string())
            }
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub model_id: Option<String>,
    pub n: Option<usize>,
    pub t_interp0: Option<usize>,
    pub s: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub keep_parents: bool,
}

#[derive(Deserialize, Debug)]
pub struct Selection {
    pub parent_a: IndividualId,
    pub parent_b: IndividualId,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct IndividualView {
    pub id: IndividualId,
    pub image_id: String,
    pub image_url: String,
    pub generation: usize,
    pub parent_ids: Option<(IndividualId, IndividualId)>,
    pub lambda: Option<f64>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct PopulationView {
    pub session_id: String,
    pub model_id: String,
    pub generation: usize,
    pub t_interp: usize,
    pub steps: usize,
    pub s: usize,
    pub population: Vec<IndividualView>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct HistoryItem {
    pub generation: usize,
    pub parent_a: IndividualId,
    pub parent_b: IndividualId,
    pub t_interp: usize,
    pub offspring: Vec<IndividualId>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct HistoryView {
    pub session_id: String,
    pub generation: usize,
    pub history: Vec<HistoryItem>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct StatusView {
    pub session_id: String,
    pub generation: usize,
    pub t_interp: usize,
    pub steps: usize,
    pub busy: bool,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ModelView {
    pub id: String,
    pub image_shape: [usize; 3],
    pub steps: usize,
    pub arch: ArchConfig,
}

fn individual_view(session_id: &str, ind: &Individual) -> IndividualView {
    let image_id = format!("{session_id}-{}", ind.id);
    IndividualView {
        image_url: format!("/api/images/{image_id}"),
        image_id,
        id: ind.id,
        generation: ind.generation,
        parent_ids: ind.parent_ids,
        lambda: ind.lambda_used,
    }
}

fn population_view(slot: &SessionSlot, steps: usize) -> PopulationView {
    let s = slot.session.read().expect("session lock");
    PopulationView {
        session_id: s.id.clone(),
        model_id: slot.model_id.clone(),
        generation: s.generation,
        t_interp: s.t_interp,
        steps,
        s: s.config.step,
        population: s
            .population
            .iter()
            .map(|i| individual_view(&s.id, i))
            .collect(),
    }
}

fn log_event(slot: &SessionSlot, event: &RunEvent) {
    if let Some(log) = slot.log.lock().expect("log lock").as_mut() {
        if let Err(e) = log.append(event) {
            log::warn!("run log write failed: {e}");
        }
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, Error> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: Option<Json<CreateSession>>,
) -> Result<(StatusCode, Json<PopulationView>), ApiError> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let model_id = match req.model_id {
        Some(id) => id,
        None => app
            .models
            .keys()
            .next()
            .cloned()
            .ok_or_else(|| ApiError::not_found("no models are loaded".into()))?,
    };
    let entry = app
        .models
        .get(&model_id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no model {model_id:?}")))?;
    let steps = entry.schedule.steps();
    let config = EvolutionConfig {
        population_size: req.n.unwrap_or(app.config.default_population),
        t_interp0: req
            .t_interp0
            .unwrap_or(app.config.default_t_interp0)
            .min(steps),
        step: req.s.unwrap_or(app.config.default_step).min(steps),
        seed: req.seed.unwrap_or(0),
        lambda: LambdaPolicy::Uniform,
        keep_parents: req.keep_parents,
        ..EvolutionConfig::default()
    };
    config.validate()?;
    let id = format!("s{}", app.next_session.fetch_add(1, Ordering::Relaxed));
    let sid = id.clone();
    let e2 = entry.clone();
    let session =
        blocking(move || EvolutionSession::init(sid, &e2.model, &e2.schedule, config)).await?;
    let log = match &app.config.log_dir {
        Some(dir) => Some(RunLog::create(dir.join(format!("{id}.jsonl"))).map_err(ApiError::from)?),
        None => None,
    };
    let created = RunEvent::created(&session, &model_id, &entry.model, &entry.schedule);
    let archive = session
        .population
        .iter()
        .map(|i| (i.id, i.image.clone()))
        .collect();
    let slot = Arc::new(SessionSlot {
        model_id,
        session: RwLock::new(session),
        archive: RwLock::new(archive),
        busy: AtomicBool::new(false),
        log: Mutex::new(log),
    });
    log_event(&slot, &created);
    app.sessions
        .write()
        .expect("session map lock")
        .insert(id, slot.clone());
    Ok((StatusCode::CREATED, Json(population_view(&slot, steps))))
}

async fn get_population(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<PopulationView>, ApiError> {
    let slot = app.session(&id)?;
    let steps = app.models[&slot.model_id].schedule.steps();
    Ok(Json(population_view(&slot, steps)))
}

/// Clears the busy flag however the step ends.
struct BusyGuard(Arc<SessionSlot>);

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

async fn select(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(sel): Json<Selection>,
) -> Result<Json<PopulationView>, ApiError> {
    let slot = app.session(&id)?;
    if slot
        .busy
        .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
        .is_err()
    {
        return Err(ApiError::conflict(format!(
            "session {id} is already stepping"
        )));
    }
    let guard = BusyGuard(slot.clone());
    let mut next = {
        let s = slot.session.read().expect("session lock");
        s.check_selection(sel.parent_a, sel.parent_b)?;
        s.clone()
    };
    let entry = app.models[&slot.model_id].clone();
    let e2 = entry.clone();
    let next = blocking(move || {
        next.step_generation(sel.parent_a, sel.parent_b, &e2.model, &e2.schedule)?;
        Ok(next)
    })
    .await?;
    log_event(
        &slot,
        &RunEvent::SelectionMade {
            generation: next.generation - 1,
            parent_a: sel.parent_a,
            parent_b: sel.parent_b,
        },
    );
    log_event(&slot, &RunEvent::stepped(&next));
    {
        let mut archive = slot.archive.write().expect("archive lock");
        for ind in &next.population {
            archive.entry(ind.id).or_insert_with(|| ind.image.clone());
        }
    }
    *slot.session.write().expect("session lock") = next;
    drop(guard);
    Ok(Json(population_view(&slot, entry.schedule.steps())))
}

async fn get_history(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<HistoryView>, ApiError> {
    let slot = app.session(&id)?;
    let s = slot.session.read().expect("session lock");
    Ok(Json(HistoryView {
        session_id: s.id.clone(),
        generation: s.generation,
        history: s
            .history
            .iter()
            .map(|h| HistoryItem {
                generation: h.generation,
                parent_a: h.parents.0,
                parent_b: h.parents.1,
                t_interp: h.t_interp,
                offspring: h.offspring.clone(),
            })
            .collect(),
    }))
}

async fn get_status(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<StatusView>, ApiError> {
    let slot = app.session(&id)?;
    let steps = app.models[&slot.model_id].schedule.steps();
    let s = slot.session.read().expect("session lock");
    Ok(Json(StatusView {
        session_id: s.id.clone(),
        generation: s.generation,
        t_interp: s.t_interp,
        steps,
        busy: slot.busy.load(Ordering::Acquire),
    }))
}

async fn get_image(
    State(app): State<Arc<AppState>>,
    Path(image_id): Path<String>,
) -> Result<Response, ApiError> {
    let (sid, ind) = image_id
        .rsplit_once('-')
        .ok_or_else(|| ApiError::not_found(format!("no image {image_id:?}")))?;
    let ind: IndividualId = ind
        .parse()
        .map_err(|_| ApiError::not_found(format!("no image {image_id:?}")))?;
    let slot = app.session(sid)?;
    let image = slot
        .archive
        .read()
        .expect("archive lock")
        .get(&ind)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no image {image_id:?}")))?;
    let png = encode_png(&image)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn list_models(State(app): State<Arc<AppState>>) -> Json<Vec<ModelView>> {
    Json(
        app.models
            .iter()
            .map(|(id, e)| ModelView {
                id: id.clone(),
                image_shape: e.model.image_shape(),
                steps: e.schedule.steps(),
                arch: e.model.arch().clone(),
            })
            .collect(),
    )
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint".into())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/models", get(list_models))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/population", get(get_population))
        .route("/api/sessions/{id}/select", post(select))
        .route("/api/sessions/{id}/history", get(get_history))
        .route("/api/sessions/{id}/status", get(get_status))
        .route("/api/images/{id}", get(get_image))
        .fallback(fallback)
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

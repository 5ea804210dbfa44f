//! HTTP decision service.
//!
//! | method | path                        | body                              |
//! |--------|-----------------------------|-----------------------------------|
//! | GET    | `/scenarios`                |                                   |
//! | POST   | `/sessions`                 | `{scenario_id, condition_text?}`  |
//! | GET    | `/sessions/{id}`            |                                   |
//! | POST   | `/sessions/{id}/question`   |                                   |
//! | POST   | `/sessions/{id}/answer`     | `{answer: "yes" \| "no"}`         |
//! | POST   | `/sessions/{id}/override`   | `{factor_id, value_id, p}`        |
//! | POST   | `/sessions/{id}/condition`  | `{text}`                          |
//!
//! Session state lives only in the [`SessionStore`]; each request replays
//! the stored events, so several services over one store file agree.
//! Writes to one session are serialized; model calls and file I/O run on the
//! blocking pool.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bird_core::engine::{FollowupQuestion, FollowupStrategy};
use bird_core::llm::CompletionProvider;
use bird_core::pipeline::Pipeline;
use bird_core::session::HistoryEntry;
use bird_core::{
    BirdError, BundleCatalog, DecisionSession, EstimatorKind, OutcomeEstimate, PartialObservation, PreferenceOverride,
    Scenario, ScenarioBundle, SessionEvent, SessionStore, Support,
};
use serde::{Deserialize, Serialize};

pub type DynPipeline = Pipeline<Box<dyn CompletionProvider>>;

pub struct AppState {
    catalog: BundleCatalog,
    store: SessionStore,
    pipeline: DynPipeline,
    followup: FollowupStrategy,
    locks: parking_lot::Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    pub fn new(catalog: BundleCatalog, store: SessionStore, pipeline: DynPipeline, followup: FollowupStrategy) -> Self {
        AppState { catalog, store, pipeline, followup, locks: parking_lot::Mutex::new(HashMap::new()) }
    }

    fn lock_for(&self, session_id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.locks.lock().entry(session_id.to_string()).or_default().clone()
    }

    fn bundle_of(&self, session_id: &str) -> Result<&ScenarioBundle, ApiError> {
        let scenario_id = self.store.scenario_of(session_id)?;
        Ok(self.catalog.get(&scenario_id)?)
    }

    fn view(&self, session: &DecisionSession) -> Result<SessionView, ApiError> {
        let bundle = self.catalog.get(&session.scenario_id)?;
        SessionView::build(bundle, session)
    }

    /// Yes/no wording from the model, or the template wording when the
    /// model is unavailable.
    fn phrase(&self, bundle: &ScenarioBundle, mut question: FollowupQuestion) -> FollowupQuestion {
        let space = &bundle.space;
        let text = space
            .factor_index(&question.factor_id)
            .and_then(|fi| space.factor(fi).values.iter().find(|v| v.value_id == question.value_id))
            .map(|v| v.text.clone());
        if let Some(text) = text {
            match self.pipeline.rephrase_question(&text) {
                Ok(q) => question.question_text = q,
                Err(e) => log::warn!("keeping template question for {}: {e}", question.factor_id),
            }
        }
        question
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/scenarios", get(list_scenarios))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/question", post(ask_question))
        .route("/sessions/{id}/answer", post(answer_question))
        .route("/sessions/{id}/override", post(set_override))
        .route("/sessions/{id}/condition", post(add_condition))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }
}

impl From<BirdError> for ApiError {
    fn from(e: BirdError) -> Self {
        let status = match &e {
            BirdError::UnknownSession(_) | BirdError::MissingBundle(_) => StatusCode::NOT_FOUND,
            BirdError::AlreadyObserved(_) | BirdError::NothingToAsk => StatusCode::CONFLICT,
            BirdError::Domain(_)
            | BirdError::UnknownFactor(_)
            | BirdError::UnknownValue { .. }
            | BirdError::SpaceTooLarge { .. }
            | BirdError::NotComparable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            BirdError::Validation(_) => StatusCode::BAD_REQUEST,
            BirdError::Provider(_) | BirdError::MalformedPayload(_) | BirdError::FixtureMiss(_) | BirdError::Parse { .. } => {
                StatusCode::BAD_GATEWAY
            }
            BirdError::Schema { .. } | BirdError::Io(_) | BirdError::Json(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}", self.message);
        }
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
}

/// Loads a session, lets `f` change it and appends the new events, holding
/// the session's write lock throughout.
async fn mutate<T: Send + 'static>(
    state: Arc<AppState>,
    session_id: String,
    f: impl FnOnce(&AppState, &ScenarioBundle, &mut DecisionSession) -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    let lock = state.lock_for(&session_id);
    let _guard = lock.lock().await;
    blocking(move || {
        let bundle = state.bundle_of(&session_id)?;
        let mut session = state.store.load(&session_id, bundle)?;
        let out = f(&state, bundle, &mut session)?;
        state.store.save(&session)?;
        Ok(out)
    })
    .await
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueView {
    pub value_id: String,
    pub text: String,
    pub support: Support,
    /// Current `P(outcome 1 | value)`, overrides included.
    pub p_outcome1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorView {
    pub factor_id: String,
    pub name: String,
    pub observed: Option<String>,
    pub values: Vec<ValueView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub scenario: Scenario,
    pub estimator: EstimatorKind,
    pub observation: PartialObservation,
    pub overrides: PreferenceOverride,
    pub pending_question: Option<FollowupQuestion>,
    pub estimate: OutcomeEstimate,
    pub factors: Vec<FactorView>,
    pub history: Vec<HistoryEntry>,
    pub loss_trace: Vec<f64>,
}

impl SessionView {
    fn build(bundle: &ScenarioBundle, session: &DecisionSession) -> ApiResult<Self> {
        let table = session.table(bundle)?;
        let factors = bundle
            .space
            .factors()
            .iter()
            .zip(table.rows())
            .map(|(f, row)| FactorView {
                factor_id: f.factor_id.clone(),
                name: f.name.clone(),
                observed: session.observation.get(&f.factor_id).map(str::to_string),
                values: f
                    .values
                    .iter()
                    .zip(row)
                    .map(|(v, e)| ValueView { value_id: v.value_id.clone(), text: v.text.clone(), support: v.support, p_outcome1: e.p })
                    .collect(),
            })
            .collect();
        Ok(SessionView {
            session_id: session.session_id.clone(),
            scenario: bundle.scenario().clone(),
            estimator: session.estimator,
            observation: session.observation.clone(),
            overrides: session.overrides.clone(),
            pending_question: session.pending_question.clone(),
            estimate: session.estimate.clone(),
            factors,
            history: session.history.clone(),
            loss_trace: bundle.loss_trace().to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: Scenario,
    pub factors: usize,
    pub trained: bool,
}

async fn list_scenarios(State(state): State<Arc<AppState>>) -> Json<Vec<ScenarioSummary>> {
    Json(
        state
            .catalog
            .iter()
            .map(|b| ScenarioSummary { scenario: b.scenario().clone(), factors: b.space.len(), trained: b.trained.is_some() })
            .collect(),
    )
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub scenario_id: String,
    #[serde(default)]
    pub condition_text: Option<String>,
    /// Observation to start from, merged under any entailed one.
    #[serde(default)]
    pub observation: Option<PartialObservation>,
    #[serde(default)]
    pub estimator: Option<String>,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(body): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let bundle = state.catalog.get(&body.scenario_id)?;
    let estimator = match &body.estimator {
        Some(s) => s.parse::<EstimatorKind>()?,
        None if bundle.trained.is_some() => EstimatorKind::Trained,
        None => EstimatorKind::FixedInit,
    };
    let view = blocking(move || {
        let bundle = state.catalog.get(&body.scenario_id)?;
        let mut observation = body.observation.unwrap_or_default();
        let condition_text = body.condition_text.filter(|t| !t.trim().is_empty());
        if let Some(text) = &condition_text {
            for (factor, value) in state.pipeline.entail(&bundle.space, text)?.iter() {
                if !observation.contains(factor) {
                    observation.insert(factor, value);
                }
            }
        }
        let session_id = uuid::Uuid::new_v4().simple().to_string();
        let event = SessionEvent::Created {
            scenario_id: body.scenario_id.clone(),
            estimator,
            condition_text,
            observation,
        };
        let session = DecisionSession::start(bundle, &session_id, event)?;
        state.store.save(&session)?;
        state.view(&session)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    blocking(move || {
        let bundle = state.bundle_of(&id)?;
        let session = state.store.load(&id, bundle)?;
        state.view(&session)
    })
    .await
    .map(Json)
}

async fn ask_question(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<FollowupQuestion>> {
    mutate(state, id, |state, bundle, session| {
        if let Some(q) = &session.pending_question {
            return Ok(q.clone());
        }
        let question = state.phrase(bundle, session.propose_question(bundle, state.followup)?);
        session.apply(bundle, SessionEvent::Question { question: question.clone() })?;
        Ok(question)
    })
    .await
    .map(Json)
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum AnswerValue {
    Flag(bool),
    Word(String),
}

#[derive(Debug, Deserialize)]
pub struct AnswerBody {
    answer: AnswerValue,
}

impl AnswerBody {
    fn yes(&self) -> ApiResult<bool> {
        match &self.answer {
            AnswerValue::Flag(b) => Ok(*b),
            AnswerValue::Word(w) => match w.trim().to_ascii_lowercase().as_str() {
                "yes" | "y" | "true" => Ok(true),
                "no" | "n" | "false" => Ok(false),
                other => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("answer must be yes or no, got `{other}`"))),
            },
        }
    }
}

async fn answer_question(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<AnswerBody>,
) -> ApiResult<Json<SessionView>> {
    let answer = body.yes()?;
    mutate(state, id, move |state, bundle, session| {
        let question = session
            .pending_question
            .clone()
            .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no pending question to answer"))?;
        session.apply(bundle, SessionEvent::Answer { question, answer })?;
        state.view(session)
    })
    .await
    .map(Json)
}

#[derive(Debug, Deserialize)]
pub struct OverrideBody {
    pub factor_id: String,
    pub value_id: String,
    pub p: f64,
}

async fn set_override(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<OverrideBody>,
) -> ApiResult<Json<SessionView>> {
    mutate(state, id, move |state, bundle, session| {
        session.apply(bundle, SessionEvent::Override { factor_id: body.factor_id, value_id: body.value_id, p: body.p })?;
        state.view(session)
    })
    .await
    .map(Json)
}

#[derive(Debug, Deserialize)]
pub struct ConditionBody {
    pub text: String,
}

async fn add_condition(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<ConditionBody>,
) -> ApiResult<Json<SessionView>> {
    mutate(state, id, move |state, bundle, session| {
        let observation = state.pipeline.entail(&bundle.space, &body.text)?;
        session.apply(bundle, SessionEvent::Condition { text: body.text, observation })?;
        state.view(session)
    })
    .await
    .map(Json)
}

//! Interactive decision sessions.
//!
//! A session is a fold over events. Every event is stored with the estimate
//! it produced, so any history can be replayed and checked. Model calls
//! (entailment, question rephrasing) happen before an event is built; the
//! event records their results, which keeps replay model-free.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bundle::ScenarioBundle;
use crate::engine::{
    apply_answer, infer, select_followup_with, EngineConfig, FollowupQuestion, FollowupStrategy, OutcomeEstimate,
    PreferenceOverride,
};
use crate::error::{BirdError, Result};
use crate::factor_model::PartialObservation;
use crate::pool::{EstimatorKind, ProbabilityTable};

pub const SESSION_LOG_FORMAT: &str = "session_log.v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    Created {
        scenario_id: String,
        estimator: EstimatorKind,
        condition_text: Option<String>,
        observation: PartialObservation,
    },
    Question {
        question: FollowupQuestion,
    },
    Answer {
        question: FollowupQuestion,
        answer: bool,
    },
    Override {
        factor_id: String,
        value_id: String,
        p: f64,
    },
    Condition {
        text: String,
        observation: PartialObservation,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub event: SessionEvent,
    pub estimate: OutcomeEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionSession {
    pub session_id: String,
    pub scenario_id: String,
    pub estimator: EstimatorKind,
    pub observation: PartialObservation,
    pub overrides: PreferenceOverride,
    pub pending_question: Option<FollowupQuestion>,
    pub estimate: OutcomeEstimate,
    pub history: Vec<HistoryEntry>,
}

fn estimate(bundle: &ScenarioBundle, kind: EstimatorKind, obs: &PartialObservation, overrides: &PreferenceOverride) -> Result<OutcomeEstimate> {
    let table = bundle.table_for(kind)?;
    let overrides = (!overrides.is_empty()).then_some(overrides);
    infer(&bundle.space, &table, obs, kind, overrides)
}

/// Adds values for factors not yet observed. Earlier observations win.
fn merge(base: &PartialObservation, extra: &PartialObservation) -> PartialObservation {
    let mut out = base.clone();
    for (factor, value) in extra.iter() {
        match base.get(factor) {
            None => out.insert(factor, value),
            Some(existing) if existing != value => {
                log::info!("keeping {factor}={existing}; the new condition implies {value}");
            }
            Some(_) => {}
        }
    }
    out
}

impl DecisionSession {
    /// Starts a session from a `Created` event.
    pub fn start(bundle: &ScenarioBundle, session_id: &str, event: SessionEvent) -> Result<Self> {
        let SessionEvent::Created { scenario_id, estimator, observation, .. } = &event else {
            return Err(BirdError::validation("a session must start with a `created` event"));
        };
        if scenario_id != bundle.scenario_id() {
            return Err(BirdError::validation(format!(
                "event is for scenario `{scenario_id}`, bundle is `{}`",
                bundle.scenario_id()
            )));
        }
        bundle.space.resolve(observation)?;
        let overrides = PreferenceOverride::new();
        let current = estimate(bundle, *estimator, observation, &overrides)?;
        Ok(DecisionSession {
            session_id: session_id.to_string(),
            scenario_id: scenario_id.clone(),
            estimator: *estimator,
            observation: observation.clone(),
            overrides,
            pending_question: None,
            estimate: current.clone(),
            history: vec![HistoryEntry { event, estimate: current }],
        })
    }

    /// Table with the session's overrides written in.
    pub fn table(&self, bundle: &ScenarioBundle) -> Result<ProbabilityTable> {
        let table = bundle.table()?;
        if self.overrides.is_empty() { Ok(table) } else { self.overrides.apply(&bundle.space, &table) }
    }

    /// Follow-up question for an unobserved factor; seeded by the session id
    /// and the number of questions asked so far.
    pub fn propose_question(&self, bundle: &ScenarioBundle, strategy: FollowupStrategy) -> Result<FollowupQuestion> {
        let asked = self.history.iter().filter(|h| matches!(h.event, SessionEvent::Question { .. })).count();
        let digest = Sha256::digest(format!("{}#{asked}", self.session_id).as_bytes());
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        select_followup_with(&EngineConfig::default(), &bundle.space, &self.table(bundle)?, &self.observation, seed, strategy)
    }

    /// Applies one event. On error the session is unchanged.
    pub fn apply(&mut self, bundle: &ScenarioBundle, event: SessionEvent) -> Result<&OutcomeEstimate> {
        let mut observation = self.observation.clone();
        let mut overrides = self.overrides.clone();
        let mut pending = self.pending_question.clone();
        match &event {
            SessionEvent::Created { .. } => {
                return Err(BirdError::validation("session already created"));
            }
            SessionEvent::Question { question } => {
                let fi = bundle
                    .space
                    .factor_index(&question.factor_id)
                    .ok_or_else(|| BirdError::UnknownFactor(question.factor_id.clone()))?;
                if bundle.space.factor(fi).value_index(&question.value_id).is_none() {
                    return Err(BirdError::UnknownValue { factor: question.factor_id.clone(), value: question.value_id.clone() });
                }
                if observation.contains(&question.factor_id) {
                    return Err(BirdError::AlreadyObserved(question.factor_id.clone()));
                }
                pending = Some(question.clone());
            }
            SessionEvent::Answer { question, answer } => {
                observation = apply_answer(&bundle.space, &observation, question, *answer)?;
                pending = None;
            }
            SessionEvent::Override { factor_id, value_id, p } => {
                overrides.set(factor_id, value_id, *p);
                overrides.validate(&bundle.space, bundle.table()?.delta())?;
            }
            SessionEvent::Condition { observation: extra, .. } => {
                bundle.space.resolve(extra)?;
                observation = merge(&observation, extra);
                if pending.as_ref().is_some_and(|q| observation.contains(&q.factor_id)) {
                    pending = None;
                }
            }
        }
        let current = estimate(bundle, self.estimator, &observation, &overrides)?;
        self.observation = observation;
        self.overrides = overrides;
        self.pending_question = pending;
        self.estimate = current.clone();
        self.history.push(HistoryEntry { event, estimate: current });
        Ok(&self.estimate)
    }

    /// Rebuilds a session from its events.
    pub fn replay(bundle: &ScenarioBundle, session_id: &str, events: &[SessionEvent]) -> Result<Self> {
        let (first, rest) = events.split_first().ok_or_else(|| BirdError::UnknownSession(session_id.to_string()))?;
        let mut session = DecisionSession::start(bundle, session_id, first.clone())?;
        for event in rest {
            session.apply(bundle, event.clone())?;
        }
        Ok(session)
    }

    /// True when replaying the events reproduces every recorded estimate.
    pub fn verify(&self, bundle: &ScenarioBundle) -> Result<bool> {
        let events: Vec<SessionEvent> = self.history.iter().map(|h| h.event.clone()).collect();
        let replayed = DecisionSession::replay(bundle, &self.session_id, &events)?;
        Ok(replayed.history == self.history)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LogRecord {
    format: String,
    session_id: String,
    seq: usize,
    event: SessionEvent,
    estimate: OutcomeEstimate,
}

#[derive(Debug, Default)]
struct StoreState {
    offset: u64,
    partial: String,
    records: HashMap<String, Vec<HistoryEntry>>,
}

/// Append-only JSON-lines log of session events. Every read first picks up
/// lines appended since the previous read, so several processes can share
/// one file.
#[derive(Debug)]
pub struct SessionStore {
    path: Option<PathBuf>,
    state: Mutex<StoreState>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        SessionStore { path: None, state: Mutex::new(StoreState::default()) }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        OpenOptions::new().create(true).append(true).open(&path)?;
        let store = SessionStore { path: Some(path), state: Mutex::new(StoreState::default()) };
        store.refresh(&mut store.state.lock())?;
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn refresh(&self, state: &mut StoreState) -> Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        let mut file = std::fs::File::open(path)?;
        let len = file.metadata()?.len();
        if len < state.offset {
            return Err(BirdError::validation(format!("session log {} shrank", path.display())));
        }
        if len == state.offset {
            return Ok(());
        }
        file.seek(SeekFrom::Start(state.offset))?;
        let mut chunk = String::new();
        file.read_to_string(&mut chunk)?;
        state.offset = len;
        let mut text = std::mem::take(&mut state.partial);
        text.push_str(&chunk);
        let complete = text.rfind('\n').map_or(0, |i| i + 1);
        state.partial = text[complete..].to_string();
        for line in text[..complete].lines().filter(|l| !l.trim().is_empty()) {
            let record: LogRecord = serde_json::from_str(line)?;
            if record.format != SESSION_LOG_FORMAT {
                return Err(BirdError::validation(format!("unexpected session log format `{}`", record.format)));
            }
            let entries = state.records.entry(record.session_id).or_default();
            if record.seq != entries.len() {
                log::warn!("session log sequence gap: expected {}, found {}", entries.len(), record.seq);
            }
            entries.push(HistoryEntry { event: record.event, estimate: record.estimate });
        }
        Ok(())
    }

    /// Appends the entries of `session` not yet stored.
    pub fn save(&self, session: &DecisionSession) -> Result<()> {
        let mut state = self.state.lock();
        self.refresh(&mut state)?;
        let stored = state.records.get(&session.session_id).map_or(0, Vec::len);
        if stored > session.history.len() {
            return Err(BirdError::validation(format!("session `{}` has newer entries in the store", session.session_id)));
        }
        let mut lines = String::new();
        for (seq, entry) in session.history.iter().enumerate().skip(stored) {
            let record = LogRecord {
                format: SESSION_LOG_FORMAT.to_string(),
                session_id: session.session_id.clone(),
                seq,
                event: entry.event.clone(),
                estimate: entry.estimate.clone(),
            };
            lines.push_str(&serde_json::to_string(&record)?);
            lines.push('\n');
        }
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new().append(true).open(path)?;
            file.write_all(lines.as_bytes())?;
            file.flush()?;
            self.refresh(&mut state)?;
        } else {
            state
                .records
                .entry(session.session_id.clone())
                .or_default()
                .extend(session.history[stored..].iter().cloned());
        }
        Ok(())
    }

    /// Stored history of a session.
    pub fn history(&self, session_id: &str) -> Result<Vec<HistoryEntry>> {
        let mut state = self.state.lock();
        self.refresh(&mut state)?;
        state.records.get(session_id).cloned().ok_or_else(|| BirdError::UnknownSession(session_id.to_string()))
    }

    /// Rebuilds a session by replaying its stored events.
    pub fn load(&self, session_id: &str, bundle: &ScenarioBundle) -> Result<DecisionSession> {
        let history = self.history(session_id)?;
        let events: Vec<SessionEvent> = history.iter().map(|h| h.event.clone()).collect();
        let session = DecisionSession::replay(bundle, session_id, &events)?;
        if session.history != history {
            log::warn!("replayed estimates for session `{session_id}` differ from the stored ones");
        }
        Ok(session)
    }

    pub fn scenario_of(&self, session_id: &str) -> Result<String> {
        match self.history(session_id)?.first().map(|h| &h.event) {
            Some(SessionEvent::Created { scenario_id, .. }) => Ok(scenario_id.clone()),
            _ => Err(BirdError::UnknownSession(session_id.to_string())),
        }
    }

    pub fn session_ids(&self) -> Result<Vec<String>> {
        let mut state = self.state.lock();
        self.refresh(&mut state)?;
        let mut ids: Vec<String> = state.records.keys().cloned().collect();
        ids.sort();
        Ok(ids)
    }
}

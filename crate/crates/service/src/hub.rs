//! Session registry and escalation queue behind the HTTP layer.
//!
//! Locking: a per-session mutex is always taken before the queue mutex.
//! Teacher input uses `try_lock`, so a second in-flight turn for the same
//! session is refused with `Busy` instead of queueing behind the first.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock, TryLockError};

use iqa_core::config::Config;
use iqa_core::dialogue::{DialogueError, Engine, Outcome, Phase, Session, SessionEvent, Turn};
use iqa_core::scenario::{ScenarioError, ScenarioSeed, ScenarioState};
use iqa_core::supervisor::{EscalationQueue, EscalationTicket, QueueError, QueueEvent, TicketStatus};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;

use crate::log::{load_log, log_files, LogError, LogRecord, LogSink, RecordKind};
use crate::survey::{Role, SurveyDefinition, SurveyResponse};

#[derive(Debug, Error)]
pub enum HubError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session is busy with another request")]
    Busy,
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("a survey was already submitted for session {0}")]
    SurveyExists(String),
    #[error("invalid request: {0}")]
    Validation(String),
    #[error(transparent)]
    Log(#[from] LogError),
}

impl HubError {
    /// Stable machine-readable code for the wire format.
    pub fn code(&self) -> &'static str {
        match self {
            HubError::UnknownSession(_) => "unknown_session",
            HubError::Busy => "busy",
            HubError::Dialogue(e) => match e {
                DialogueError::WrongPhase(_) => "wrong_phase",
                DialogueError::SessionClosed => "session_closed",
                DialogueError::UnknownTicket(_) => "unknown_ticket",
                DialogueError::EmptyUtterance | DialogueError::EmptyReply => "validation",
                _ => "internal",
            },
            HubError::Queue(e) => match e {
                QueueError::DuplicateTicket(_) => "duplicate_ticket",
                QueueError::AlreadyClaimed(..) => "already_claimed",
                QueueError::UnknownTicket(_) => "unknown_ticket",
                QueueError::NotClaimant(_) => "not_claimant",
                QueueError::NotClaimed(_) => "not_claimed",
                QueueError::EmptyReply => "empty_reply",
                QueueError::NoTrigger(_) => "internal",
            },
            HubError::Scenario(_) => "invalid_scenario",
            HubError::SurveyExists(_) => "survey_exists",
            HubError::Validation(_) => "validation",
            HubError::Log(_) => "storage",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session: String,
    pub phase: Phase,
    pub greeting: Turn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub session: String,
    pub outcome: Outcome,
    pub phase: Phase,
    pub turns: Vec<Turn>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub ticket: EscalationTicket,
    pub turn: Turn,
    pub phase: Phase,
    pub latency_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub session: String,
    pub phase: Phase,
    pub turns: Vec<Turn>,
}

struct Slot {
    session: Session,
    next_seq: u64,
    survey: Option<SurveyResponse>,
    sink: LogSink,
}

impl Slot {
    fn write(&mut self, kind: RecordKind, ts: u64, payload: &impl Serialize) -> Result<LogRecord, LogError> {
        let record = LogRecord::new(self.next_seq, &self.session.id, kind, ts, payload);
        self.sink.append(&record)?;
        self.next_seq += 1;
        Ok(record)
    }
}

pub struct Hub {
    engine: Engine,
    config: Config,
    seed: ScenarioSeed,
    survey: SurveyDefinition,
    log_dir: Option<PathBuf>,
    queue: Arc<EscalationQueue>,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Slot>>>>,
    next_id: AtomicU64,
    events: broadcast::Sender<LogRecord>,
}

#[derive(Clone, Debug)]
pub struct HubOptions {
    pub config: Config,
    pub seed: ScenarioSeed,
    pub survey: SurveyDefinition,
    /// `None` keeps logs in memory only.
    pub log_dir: Option<PathBuf>,
}

impl HubOptions {
    pub fn in_memory(config: Config) -> Self {
        Self { config, seed: ScenarioSeed::default(), survey: SurveyDefinition::default(), log_dir: None }
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Hub {
    /// Builds a hub, replaying every session log found in the log directory.
    /// Returns warnings for logs whose damaged tail was dropped.
    pub fn open(engine: Engine, opts: HubOptions) -> Result<(Hub, Vec<String>), HubError> {
        let (events, _) = broadcast::channel(1024);
        let hub = Hub {
            engine,
            queue: EscalationQueue::shared(opts.config.server.supervisor_mode),
            config: opts.config,
            seed: opts.seed,
            survey: opts.survey,
            log_dir: opts.log_dir,
            sessions: RwLock::default(),
            next_id: AtomicU64::new(1),
            events,
        };
        let mut warnings = Vec::new();
        if let Some(dir) = hub.log_dir.clone() {
            warnings = hub.rehydrate(&dir)?;
        }
        Ok((hub, warnings))
    }

    fn rehydrate(&self, dir: &Path) -> Result<Vec<String>, HubError> {
        let mut warnings = Vec::new();
        let mut tickets = Vec::new();
        let mut max_id = 0;
        for path in log_files(dir)? {
            let loaded = load_log(&path)?;
            warnings.extend(loaded.warnings);
            if loaded.records.is_empty() {
                warnings.push(format!("{}: empty log skipped", path.display()));
                continue;
            }
            let rebuilt = rebuild(&path, &loaded.records)?;
            let id = rebuilt.session.id.clone();
            if let Some(n) = id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                max_id = max_id.max(n);
            }
            tickets.extend(rebuilt.tickets);
            let slot = Slot {
                session: rebuilt.session,
                next_seq: loaded.records.len() as u64,
                survey: rebuilt.survey,
                sink: LogSink::reopen(&path)?,
            };
            self.sessions.write().unwrap_or_else(|p| p.into_inner()).insert(id, Arc::new(Mutex::new(slot)));
        }
        tickets.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
        for t in tickets {
            self.queue.restore(t);
        }
        self.next_id.store(max_id + 1, Ordering::SeqCst);
        Ok(warnings)
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn survey_definition(&self) -> &SurveyDefinition {
        &self.survey
    }

    pub fn queue(&self) -> &EscalationQueue {
        &self.queue
    }

    /// Every appended log record, as it is written.
    pub fn subscribe(&self) -> broadcast::Receiver<LogRecord> {
        self.events.subscribe()
    }

    fn publish(&self, records: Vec<LogRecord>) {
        for r in records {
            let _ = self.events.send(r);
        }
    }

    fn slot(&self, id: &str) -> Result<Arc<Mutex<Slot>>, HubError> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| HubError::UnknownSession(id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().unwrap_or_else(|p| p.into_inner()).keys().cloned().collect()
    }

    pub fn create_session(&self, seed: Option<&ScenarioSeed>, now: u64) -> Result<SessionCreated, HubError> {
        let state = seed.unwrap_or(&self.seed).build()?;
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::SeqCst));
        self.create_session_with(&id, state, now)
    }

    /// Opens a session with a fixed id and starting state.
    pub fn create_session_with(&self, id: &str, state: ScenarioState, now: u64) -> Result<SessionCreated, HubError> {
        let mut sessions = self.sessions.write().unwrap_or_else(|p| p.into_inner());
        if sessions.contains_key(id) {
            return Err(HubError::Validation(format!("session {id} already exists")));
        }
        let (session, opened) = Session::open(id, state, self.config.uncertainty(), now);
        let sink = match &self.log_dir {
            Some(dir) => LogSink::create(dir, id)?,
            None => LogSink::Memory(Vec::new()),
        };
        let mut slot = Slot { session, next_seq: 0, survey: None, sink };
        let records = vec![slot.write(RecordKind::Config, now, &self.config)?, slot.write(RecordKind::Turn, now, &opened)?];
        let created = SessionCreated { session: id.to_string(), phase: slot.session.phase, greeting: slot.session.turns[0].clone() };
        sessions.insert(id.to_string(), Arc::new(Mutex::new(slot)));
        drop(sessions);
        self.publish(records);
        Ok(created)
    }

    pub fn post_utterance(&self, id: &str, text: &str, now: u64) -> Result<TurnResult, HubError> {
        let slot = self.slot(id)?;
        let mut slot = match slot.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => return Err(HubError::Busy),
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        let (next, event) = slot.session.handle_teacher_turn(&self.engine, text, now)?;
        if let Some(ticket) = event.ticket() {
            self.queue.enqueue(ticket.clone())?;
        }
        let mut records = vec![slot.write(RecordKind::Turn, now, &event)?];
        if let Some(ticket) = event.ticket() {
            records.push(slot.write(RecordKind::Ticket, now, &QueueEvent::Enqueued { ticket: ticket.clone() })?);
        }
        let before = slot.session.turns.len();
        slot.session = next;
        let result = TurnResult {
            session: id.to_string(),
            outcome: event.outcome().expect("teacher turns have outcomes"),
            phase: slot.session.phase,
            turns: slot.session.turns[before..].to_vec(),
        };
        drop(slot);
        self.publish(records);
        Ok(result)
    }

    fn ticket_slot(&self, ticket_id: &str) -> Result<Arc<Mutex<Slot>>, HubError> {
        let ticket = self.queue.get(ticket_id).ok_or_else(|| QueueError::UnknownTicket(ticket_id.to_string()))?;
        self.slot(&ticket.session)
    }

    pub fn claim(&self, ticket_id: &str, supervisor: &str, now: u64) -> Result<EscalationTicket, HubError> {
        let slot = self.ticket_slot(ticket_id)?;
        let mut slot = lock(&slot);
        let ticket = self.queue.claim(ticket_id, supervisor)?;
        let record = slot.write(RecordKind::Ticket, now, &QueueEvent::Claimed { ticket: ticket.clone() })?;
        drop(slot);
        self.publish(vec![record]);
        Ok(ticket)
    }

    /// Answers an escalated turn in the student's voice. The reply turn is
    /// appended under the queue lock, so each ticket yields exactly one.
    pub fn resolve(&self, ticket_id: &str, supervisor: &str, text: &str, now: u64) -> Result<Resolution, HubError> {
        let slot = self.ticket_slot(ticket_id)?;
        let mut slot = lock(&slot);
        let session = &slot.session;
        let (ticket, (next, event)) = self
            .queue
            .resolve_with(ticket_id, supervisor, text, now, |t| session.apply_supervisor_reply(&t.id, text, now))??;
        let latency_ms = ticket.latency_ms().unwrap_or(0);
        let records = vec![
            slot.write(RecordKind::Turn, now, &event)?,
            slot.write(RecordKind::Ticket, now, &QueueEvent::Resolved { ticket: ticket.clone(), latency_ms })?,
        ];
        slot.session = next;
        let resolution = Resolution {
            ticket,
            turn: slot.session.turns.last().expect("reply appended").clone(),
            phase: slot.session.phase,
            latency_ms,
        };
        drop(slot);
        self.publish(records);
        Ok(resolution)
    }

    /// Stores the survey and closes the session. Responses are immutable.
    pub fn submit_survey(&self, id: &str, answers: Vec<u8>, role: Role, now: u64) -> Result<SurveyResponse, HubError> {
        let slot = self.slot(id)?;
        let mut slot = match slot.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => return Err(HubError::Busy),
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        if slot.survey.is_some() {
            return Err(HubError::SurveyExists(id.to_string()));
        }
        let response = SurveyResponse { session: id.to_string(), answers, role };
        response.validate().map_err(HubError::Validation)?;
        let (next, closed) = slot.session.close(now)?;
        let records =
            vec![slot.write(RecordKind::Survey, now, &response)?, slot.write(RecordKind::Turn, now, &closed)?];
        slot.session = next;
        slot.survey = Some(response.clone());
        drop(slot);
        self.publish(records);
        Ok(response)
    }

    /// Turns with id greater than `since` (all turns when `None`).
    pub fn transcript(&self, id: &str, since: Option<u64>) -> Result<Transcript, HubError> {
        let slot = self.slot(id)?;
        let slot = lock(&slot);
        let turns = slot.session.turns.iter().filter(|t| since.is_none_or(|s| t.id > s)).cloned().collect();
        Ok(Transcript { session: id.to_string(), phase: slot.session.phase, turns })
    }

    pub fn session(&self, id: &str) -> Result<Session, HubError> {
        let slot = self.slot(id)?;
        let slot = lock(&slot);
        Ok(slot.session.clone())
    }

    pub fn phase(&self, id: &str) -> Result<Phase, HubError> {
        let slot = self.slot(id)?;
        let slot = lock(&slot);
        Ok(slot.session.phase)
    }

    pub fn survey(&self, id: &str) -> Result<Option<SurveyResponse>, HubError> {
        let slot = self.slot(id)?;
        let slot = lock(&slot);
        Ok(slot.survey.clone())
    }

    /// Log lines of an in-memory session; `None` when logs go to disk.
    pub fn memory_log(&self, id: &str) -> Result<Option<Vec<String>>, HubError> {
        let slot = self.slot(id)?;
        let slot = lock(&slot);
        Ok(slot.sink.lines().map(<[String]>::to_vec))
    }

    pub fn pending_tickets(&self) -> Vec<EscalationTicket> {
        self.queue.pending()
    }
}

pub(crate) struct Rebuilt {
    pub session: Session,
    pub survey: Option<SurveyResponse>,
    pub tickets: Vec<EscalationTicket>,
    pub config: Config,
}

/// Folds one session's records back into its state. The session events are
/// authoritative; ticket records contribute claimants and timestamps.
pub(crate) fn rebuild(path: &Path, records: &[LogRecord]) -> Result<Rebuilt, HubError> {
    let bad = |line: usize, message: String| LogError::Corrupt { path: path.to_path_buf(), line: line + 1, message };
    let mut config = None;
    let mut events: Vec<SessionEvent> = Vec::new();
    let mut survey = None;
    let mut latest: BTreeMap<String, EscalationTicket> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        match r.kind {
            RecordKind::Config if i == 0 => {
                config = Some(r.payload_as::<Config>().map_err(|e| bad(i, e.to_string()))?);
            }
            RecordKind::Config => return Err(bad(i, "config record after the head".into()).into()),
            _ if i == 0 => return Err(bad(i, "log must start with a config record".into()).into()),
            RecordKind::Turn => events.push(r.payload_as().map_err(|e| bad(i, e.to_string()))?),
            RecordKind::Ticket => {
                let e: QueueEvent = r.payload_as().map_err(|e| bad(i, e.to_string()))?;
                latest.insert(e.ticket().id.clone(), e.ticket().clone());
            }
            RecordKind::Survey => survey = Some(r.payload_as().map_err(|e| bad(i, e.to_string()))?),
        }
    }
    let session = Session::from_events(&events).map_err(|e| bad(records.len() - 1, e.to_string()))?;

    let mut tickets = Vec::new();
    if let Some(open) = &session.open_ticket {
        let t = match latest.remove(&open.id) {
            Some(t) if t.status != TicketStatus::Resolved => t,
            _ => open.clone(),
        };
        tickets.push(t);
    }
    for (_, mut t) in latest {
        if t.status != TicketStatus::Resolved {
            // The reply turn made it to disk but the resolve record did not.
            let reply = session.turns.iter().find(|turn| turn.reply_to == Some(t.teacher_turn));
            t.status = TicketStatus::Resolved;
            t.resolved_at = reply.map(|r| r.timestamp);
        }
        tickets.push(t);
    }
    Ok(Rebuilt {
        session,
        survey,
        tickets,
        config: config.ok_or_else(|| bad(0, "missing config record".into()))?,
    })
}

//! Per-session state machine.
//!
//! A session is event-sourced: every operation first plans a
//! [`SessionEvent`] and then folds it in with [`Session::apply`]. Replaying
//! logged events therefore rebuilds the session exactly.

mod templates;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entity::{
    extract_entities, Attribute, EntityAnnotation, EntityError, FigureRef, RelationCandidate, RelationScorer,
};
use crate::nlu::{normalize, ActModel, NluError};
use crate::scenario::{Answer, Assertion, ScenarioError, ScenarioState};
use crate::supervisor::{EscalationTicket, TicketDiagnostics, TicketStatus};
use crate::uncertainty::{ensemble_classify, gate, ActDistribution, GateDecision, UncertaintyConfig};

pub use templates::{Atom, FigureArg, Guard, GuardContext, ResponseTemplate, Slot, TemplateSet, TemplateSpec};

pub const GREETING: &str = "Hi! I am ready to work on the two prisms.";

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("not allowed while the session is {0}")]
    WrongPhase(Phase),
    #[error("session is closed")]
    SessionClosed,
    #[error("unknown or closed ticket {0}")]
    UnknownTicket(String),
    #[error("utterance is empty")]
    EmptyUtterance,
    #[error("reply text is empty")]
    EmptyReply,
    #[error("template: {0}")]
    Template(String),
    #[error("event does not fit the session: {0}")]
    Replay(String),
    #[error(transparent)]
    Nlu(#[from] NluError),
    #[error(transparent)]
    Entity(#[from] EntityError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingTeacher,
    AwaitingSupervisor,
    Closed,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::AwaitingTeacher => "awaiting_teacher",
            Phase::AwaitingSupervisor => "awaiting_supervisor",
            Phase::Closed => "closed",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Teacher,
    Student,
    SupervisorAsStudent,
}

/// Pipeline output stored on every teacher turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnAnalysis {
    pub normalized: String,
    pub act: ActDistribution,
    pub entities: EntityAnnotation,
    pub relations: Vec<RelationCandidate>,
    /// Figure after carrying the last specified one forward.
    pub figure: Option<FigureRef>,
    pub focus: Option<Attribute>,
    pub entity_confidence: f64,
    pub scenario_consistent: bool,
    pub conflict: Option<String>,
    pub gate: GateDecision,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub id: u64,
    pub speaker: Speaker,
    pub text: String,
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<Box<TurnAnalysis>>,
    /// For supervisor replies: the escalated teacher turn being answered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_to: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ticket: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum TurnOutcome {
    StudentReply { turn: Turn },
    Escalated { ticket: EscalationTicket },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Opened { session: String, scenario: ScenarioState, config: UncertaintyConfig, greeting: Turn },
    TeacherTurn { teacher: Turn, outcome: TurnOutcome, committed: Vec<Assertion> },
    SupervisorReply { ticket: String, turn: Turn },
    Closed { timestamp: u64 },
}

/// Short form of a teacher-turn result.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    StudentReply { text: String },
    Escalated { ticket: String },
}

impl SessionEvent {
    pub fn outcome(&self) -> Option<Outcome> {
        match self {
            SessionEvent::TeacherTurn { outcome: TurnOutcome::StudentReply { turn }, .. } => {
                Some(Outcome::StudentReply { text: turn.text.clone() })
            }
            SessionEvent::TeacherTurn { outcome: TurnOutcome::Escalated { ticket }, .. } => {
                Some(Outcome::Escalated { ticket: ticket.id.clone() })
            }
            _ => None,
        }
    }

    pub fn ticket(&self) -> Option<&EscalationTicket> {
        match self {
            SessionEvent::TeacherTurn { outcome: TurnOutcome::Escalated { ticket }, .. } => Some(ticket),
            _ => None,
        }
    }
}

/// Trained models and templates shared by all sessions.
#[derive(Clone)]
pub struct Engine {
    pub classifier: Arc<dyn ActModel>,
    pub scorer: Arc<RelationScorer>,
    pub templates: Arc<TemplateSet>,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine").field("templates", &self.templates.templates().len()).finish_non_exhaustive()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub scenario: ScenarioState,
    pub turns: Vec<Turn>,
    pub phase: Phase,
    pub config: UncertaintyConfig,
    pub open_ticket: Option<EscalationTicket>,
    pub last_figure: Option<FigureRef>,
}

impl Session {
    /// Empty shell that only accepts an `Opened` event.
    fn blank() -> Self {
        Session {
            id: String::new(),
            scenario: ScenarioState::new(),
            turns: Vec::new(),
            phase: Phase::Closed,
            config: UncertaintyConfig::default(),
            open_ticket: None,
            last_figure: None,
        }
    }

    pub fn open(id: &str, scenario: ScenarioState, config: UncertaintyConfig, now: u64) -> (Session, SessionEvent) {
        let greeting = Turn {
            id: 0,
            speaker: Speaker::Student,
            text: GREETING.to_string(),
            timestamp: now,
            analysis: None,
            reply_to: None,
            ticket: None,
        };
        let event = SessionEvent::Opened { session: id.to_string(), scenario, config, greeting };
        (Session::from_events(std::slice::from_ref(&event)).expect("opening a blank session"), event)
    }

    pub fn from_events(events: &[SessionEvent]) -> Result<Session, DialogueError> {
        let mut s = Session::blank();
        for (i, e) in events.iter().enumerate() {
            if i == 0 && !matches!(e, SessionEvent::Opened { .. }) {
                return Err(DialogueError::Replay("first event must open the session".into()));
            }
            s.apply(e)?;
        }
        Ok(s)
    }

    fn next_turn_id(&self) -> u64 {
        self.turns.last().map_or(0, |t| t.id + 1)
    }

    fn require_teacher_phase(&self) -> Result<(), DialogueError> {
        match self.phase {
            Phase::AwaitingTeacher => Ok(()),
            Phase::Closed => Err(DialogueError::SessionClosed),
            p => Err(DialogueError::WrongPhase(p)),
        }
    }

    fn push_turn(&mut self, turn: &Turn) -> Result<(), DialogueError> {
        if turn.id < self.next_turn_id() {
            return Err(DialogueError::Replay(format!("turn id {} does not increase", turn.id)));
        }
        self.turns.push(turn.clone());
        Ok(())
    }

    /// Folds one event into the session, checking it is legal in the current phase.
    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), DialogueError> {
        match event {
            SessionEvent::Opened { session, scenario, config, greeting } => {
                if !self.id.is_empty() {
                    return Err(DialogueError::Replay("session already opened".into()));
                }
                self.id = session.clone();
                self.scenario = scenario.clone();
                self.config = config.clone();
                self.phase = Phase::AwaitingTeacher;
                self.push_turn(greeting)?;
            }
            SessionEvent::TeacherTurn { teacher, outcome, committed } => {
                self.require_teacher_phase()?;
                let mut scenario = self.scenario.clone();
                for a in committed {
                    scenario = scenario
                        .assert_fact(a.turn, a.figure, a.attribute, a.value.clone())
                        .map_err(|e| DialogueError::Replay(e.to_string()))?;
                }
                self.push_turn(teacher)?;
                if let Some(a) = &teacher.analysis {
                    if a.entities.figure.figure != FigureRef::Unspecified {
                        self.last_figure = Some(a.entities.figure.figure);
                    }
                }
                match outcome {
                    TurnOutcome::StudentReply { turn } => {
                        self.push_turn(turn)?;
                        self.scenario = scenario;
                    }
                    TurnOutcome::Escalated { ticket } => {
                        if !committed.is_empty() {
                            return Err(DialogueError::Replay("escalated turns commit nothing".into()));
                        }
                        self.open_ticket = Some(ticket.clone());
                        self.phase = Phase::AwaitingSupervisor;
                    }
                }
            }
            SessionEvent::SupervisorReply { ticket, turn } => {
                if self.phase == Phase::Closed {
                    return Err(DialogueError::SessionClosed);
                }
                if self.phase != Phase::AwaitingSupervisor {
                    return Err(DialogueError::WrongPhase(self.phase));
                }
                match &self.open_ticket {
                    Some(t) if t.id == *ticket && turn.reply_to == Some(t.teacher_turn) => {}
                    _ => return Err(DialogueError::UnknownTicket(ticket.clone())),
                }
                self.push_turn(turn)?;
                self.open_ticket = None;
                self.phase = Phase::AwaitingTeacher;
            }
            SessionEvent::Closed { .. } => {
                self.require_teacher_phase()?;
                self.phase = Phase::Closed;
            }
        }
        Ok(())
    }

    fn commit(&self, event: SessionEvent) -> Result<(Session, SessionEvent), DialogueError> {
        let mut next = self.clone();
        next.apply(&event)?;
        Ok((next, event))
    }

    /// Runs one teacher utterance through the pipeline. Scenario changes are
    /// committed only when the turn proceeds.
    pub fn handle_teacher_turn(
        &self,
        engine: &Engine,
        text: &str,
        now: u64,
    ) -> Result<(Session, SessionEvent), DialogueError> {
        self.require_teacher_phase()?;
        if text.trim().is_empty() {
            return Err(DialogueError::EmptyUtterance);
        }
        let turn_id = self.next_turn_id();
        let analysis = analyze(self, engine, text, turn_id)?;
        let teacher = Turn {
            id: turn_id,
            speaker: Speaker::Teacher,
            text: text.to_string(),
            timestamp: now,
            analysis: Some(Box::new(analysis.turn)),
            reply_to: None,
            ticket: None,
        };
        let a = teacher.analysis.as_deref().expect("just set");
        let event = match analysis.reply {
            Some(reply) if !a.gate.escalates() => SessionEvent::TeacherTurn {
                outcome: TurnOutcome::StudentReply {
                    turn: Turn {
                        id: turn_id + 1,
                        speaker: Speaker::Student,
                        text: reply,
                        timestamp: now,
                        analysis: None,
                        reply_to: None,
                        ticket: None,
                    },
                },
                committed: analysis.asserted,
                teacher,
            },
            _ => {
                let ticket = EscalationTicket {
                    id: EscalationTicket::ticket_id(&self.id, turn_id),
                    session: self.id.clone(),
                    teacher_turn: turn_id,
                    utterance: text.to_string(),
                    diagnostics: TicketDiagnostics {
                        act: a.act.clone(),
                        entities: a.entities.clone(),
                        relations: a.relations.clone(),
                        entity_confidence: a.entity_confidence,
                        gate: a.gate.clone(),
                        triggered_by: a.gate.triggered_by,
                    },
                    status: TicketStatus::Open,
                    claimant: None,
                    created_at: now,
                    resolved_at: None,
                };
                let mut teacher = teacher;
                teacher.ticket = Some(ticket.id.clone());
                SessionEvent::TeacherTurn { teacher, outcome: TurnOutcome::Escalated { ticket }, committed: Vec::new() }
            }
        };
        self.commit(event)
    }

    /// Appends the supervisor's in-character answer. The scenario is left as is.
    pub fn apply_supervisor_reply(
        &self,
        ticket_id: &str,
        text: &str,
        now: u64,
    ) -> Result<(Session, SessionEvent), DialogueError> {
        if self.phase == Phase::AwaitingSupervisor && text.trim().is_empty() {
            return Err(DialogueError::EmptyReply);
        }
        let reply_to = self.open_ticket.as_ref().map(|t| t.teacher_turn);
        let turn = Turn {
            id: self.next_turn_id(),
            speaker: Speaker::SupervisorAsStudent,
            text: text.to_string(),
            timestamp: now,
            analysis: None,
            reply_to,
            ticket: Some(ticket_id.to_string()),
        };
        self.commit(SessionEvent::SupervisorReply { ticket: ticket_id.to_string(), turn })
    }

    pub fn close(&self, now: u64) -> Result<(Session, SessionEvent), DialogueError> {
        self.commit(SessionEvent::Closed { timestamp: now })
    }
}

struct Analysis {
    turn: TurnAnalysis,
    reply: Option<String>,
    asserted: Vec<Assertion>,
}

/// The attribute the utterance is about: the first mention not already
/// paired with a value, else the first mention.
fn focus_attribute(ann: &EntityAnnotation, relations: &[RelationCandidate]) -> Option<Attribute> {
    let paired = |i: usize| relations.iter().any(|c| c.attribute_mention == i && c.label && c.value.is_some());
    ann.attributes
        .iter()
        .enumerate()
        .find(|(i, _)| !paired(*i))
        .or_else(|| ann.attributes.first().map(|m| (0, m)))
        .map(|(_, m)| m.attribute)
}

fn analyze(session: &Session, engine: &Engine, text: &str, turn_id: u64) -> Result<Analysis, DialogueError> {
    let cfg = &session.config;
    let normalized = normalize(text);
    let fv = engine.classifier.featurizer().featurize(&normalized);
    let act = ensemble_classify(engine.classifier.as_ref(), &fv, cfg)?;
    let mut entities = extract_entities(&normalized);
    let relations = engine.scorer.score_relations(&normalized, &entities)?;
    entities.apply_relations(&relations);

    let spoken = entities.figure.clone();
    let ambiguous = spoken.figure == FigureRef::Unspecified && spoken.confidence > 0.0;
    let figure = match spoken.figure {
        FigureRef::Unspecified if ambiguous => None,
        FigureRef::Unspecified => session.last_figure,
        f => Some(f),
    };
    let focus = focus_attribute(&entities, &relations);
    let claims: Vec<&RelationCandidate> = relations.iter().filter(|c| c.label && c.value.is_some()).collect();
    let needs_figure = claims.iter().any(|c| c.attribute != Attribute::ScaleFactor)
        || focus.is_some_and(|a| a != Attribute::ScaleFactor);

    let mut entity_confidence = relations.iter().map(RelationCandidate::certainty).fold(1.0, f64::min);
    if needs_figure {
        if spoken.figure != FigureRef::Unspecified || ambiguous {
            entity_confidence = entity_confidence.min(spoken.confidence);
        }
        if figure.is_none() {
            entity_confidence = 0.0;
        }
    }

    let mut state = session.scenario.clone();
    let mut asserted = Vec::new();
    let mut conflict = None;
    for c in claims {
        let value = c.value.clone().expect("claims carry values");
        let expected = match c.attribute {
            Attribute::ScaleFactor => state.query(None, Attribute::ScaleFactor),
            Attribute::Volume => figure.map_or(Answer::Unknown, |f| state.query(Some(f), Attribute::Volume)),
            dim => {
                let Some(f) = figure else { continue };
                match state.assert_fact(turn_id, f, dim, value.clone()) {
                    Ok(next) => {
                        asserted.extend(next.log.last().cloned());
                        state = next;
                    }
                    Err(e @ (ScenarioError::Conflict { .. } | ScenarioError::NonPositiveValue(_))) => {
                        conflict.get_or_insert(e.to_string());
                    }
                    Err(e) => return Err(DialogueError::Replay(e.to_string())),
                }
                continue;
            }
        };
        if let Answer::Known(expected) = expected {
            if expected != value {
                conflict.get_or_insert(format!("{} {} is {expected}, not {value}", figure.map_or("", |f| f.as_str()), c.attribute));
            }
        }
    }
    let scenario_consistent = conflict.is_none() && state.consistent();

    let ctx = GuardContext { annotation: &entities, state: &state, figure, focus, asserted: !asserted.is_empty() };
    let reply = engine.templates.render(act.act(), &ctx);
    let decision = gate(&act, entity_confidence, reply.is_some(), scenario_consistent, cfg);

    Ok(Analysis {
        turn: TurnAnalysis {
            normalized,
            act,
            entities,
            relations,
            figure,
            focus,
            entity_confidence,
            scenario_consistent,
            conflict,
            gate: decision,
        },
        reply,
        asserted,
    })
}

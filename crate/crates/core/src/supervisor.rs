//! Cross-session escalation queue.
//!
//! All operations take one mutex, so they are linearizable; `claim` is a
//! compare-and-set on the ticket status.

use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entity::{EntityAnnotation, RelationCandidate};
use crate::uncertainty::{ActDistribution, GateDecision, Trigger};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueueError {
    #[error("session {0} already has an open ticket")]
    DuplicateTicket(String),
    #[error("ticket {0} is already claimed by {1}")]
    AlreadyClaimed(String, String),
    #[error("unknown or closed ticket {0}")]
    UnknownTicket(String),
    #[error("ticket {0} is claimed by another supervisor")]
    NotClaimant(String),
    #[error("reply text is empty")]
    EmptyReply,
    #[error("ticket {0} must be claimed before it is resolved")]
    NotClaimed(String),
    #[error("ticket {0} has no escalation trigger")]
    NoTrigger(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TicketStatus {
    Open,
    Claimed,
    Resolved,
}

/// Everything the supervisor panel shows for one escalated utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TicketDiagnostics {
    pub act: ActDistribution,
    pub entities: EntityAnnotation,
    pub relations: Vec<RelationCandidate>,
    pub entity_confidence: f64,
    pub gate: GateDecision,
    pub triggered_by: Trigger,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscalationTicket {
    pub id: String,
    pub session: String,
    pub teacher_turn: u64,
    pub utterance: String,
    pub diagnostics: TicketDiagnostics,
    pub status: TicketStatus,
    pub claimant: Option<String>,
    pub created_at: u64,
    pub resolved_at: Option<u64>,
}

impl EscalationTicket {
    pub fn ticket_id(session: &str, turn: u64) -> String {
        format!("{session}-t{turn}")
    }

    pub fn latency_ms(&self) -> Option<u64> {
        self.resolved_at.map(|r| r.saturating_sub(self.created_at))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum QueueEvent {
    Enqueued { ticket: EscalationTicket },
    Claimed { ticket: EscalationTicket },
    Resolved { ticket: EscalationTicket, latency_ms: u64 },
}

impl QueueEvent {
    pub fn ticket(&self) -> &EscalationTicket {
        match self {
            QueueEvent::Enqueued { ticket } | QueueEvent::Claimed { ticket } | QueueEvent::Resolved { ticket, .. } => {
                ticket
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisorMode {
    /// Tickets may be resolved without claiming first.
    Single,
    /// Resolution requires a prior claim by the same supervisor.
    Multi,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueCounts {
    pub enqueued: usize,
    pub open: usize,
    pub claimed: usize,
    pub resolved: usize,
}

type Subscriber = Box<dyn Fn(&QueueEvent) + Send + Sync>;

#[derive(Default)]
struct Inner {
    /// Creation order.
    tickets: Vec<EscalationTicket>,
}

impl Inner {
    fn find(&mut self, id: &str) -> Option<&mut EscalationTicket> {
        self.tickets.iter_mut().find(|t| t.id == id)
    }
}

pub struct EscalationQueue {
    mode: SupervisorMode,
    inner: Mutex<Inner>,
    subscribers: Mutex<Vec<Subscriber>>,
}

impl std::fmt::Debug for EscalationQueue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EscalationQueue").field("mode", &self.mode).field("counts", &self.counts()).finish()
    }
}

impl EscalationQueue {
    pub fn new(mode: SupervisorMode) -> Self {
        Self { mode, inner: Mutex::default(), subscribers: Mutex::default() }
    }

    pub fn shared(mode: SupervisorMode) -> Arc<Self> {
        Arc::new(Self::new(mode))
    }

    pub fn mode(&self) -> SupervisorMode {
        self.mode
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Registers a callback run after every state change. Delivery is
    /// at-least-once from the caller's point of view: consumers dedupe by id.
    pub fn subscribe(&self, f: impl Fn(&QueueEvent) + Send + Sync + 'static) {
        self.subscribers.lock().unwrap_or_else(|p| p.into_inner()).push(Box::new(f));
    }

    fn notify(&self, event: &QueueEvent) {
        for s in self.subscribers.lock().unwrap_or_else(|p| p.into_inner()).iter() {
            s(event);
        }
    }

    pub fn enqueue(&self, ticket: EscalationTicket) -> Result<String, QueueError> {
        if ticket.diagnostics.triggered_by == Trigger::None {
            return Err(QueueError::NoTrigger(ticket.id));
        }
        let event = {
            let mut inner = self.lock();
            let busy = inner
                .tickets
                .iter()
                .any(|t| t.session == ticket.session && t.status != TicketStatus::Resolved);
            if busy {
                return Err(QueueError::DuplicateTicket(ticket.session));
            }
            if inner.tickets.iter().any(|t| t.id == ticket.id) {
                return Err(QueueError::DuplicateTicket(ticket.session));
            }
            let mut ticket = ticket;
            ticket.status = TicketStatus::Open;
            ticket.claimant = None;
            ticket.resolved_at = None;
            inner.tickets.push(ticket.clone());
            QueueEvent::Enqueued { ticket }
        };
        self.notify(&event);
        Ok(event.ticket().id.clone())
    }

    pub fn claim(&self, ticket_id: &str, supervisor: &str) -> Result<EscalationTicket, QueueError> {
        let event = {
            let mut inner = self.lock();
            let t = inner.find(ticket_id).ok_or_else(|| QueueError::UnknownTicket(ticket_id.into()))?;
            match t.status {
                TicketStatus::Open => {
                    t.status = TicketStatus::Claimed;
                    t.claimant = Some(supervisor.to_string());
                }
                TicketStatus::Claimed => {
                    let by = t.claimant.clone().unwrap_or_default();
                    return Err(QueueError::AlreadyClaimed(ticket_id.into(), by));
                }
                TicketStatus::Resolved => return Err(QueueError::UnknownTicket(ticket_id.into())),
            }
            QueueEvent::Claimed { ticket: t.clone() }
        };
        self.notify(&event);
        Ok(event.ticket().clone())
    }

    /// Resolves a ticket. `apply` runs under the queue lock and must append the
    /// student turn; the ticket only becomes Resolved if it succeeds, so a
    /// ticket yields at most one reply.
    pub fn resolve_with<T, E>(
        &self,
        ticket_id: &str,
        supervisor: &str,
        reply: &str,
        now: u64,
        apply: impl FnOnce(&EscalationTicket) -> Result<T, E>,
    ) -> Result<Result<(EscalationTicket, T), E>, QueueError> {
        if reply.trim().is_empty() {
            return Err(QueueError::EmptyReply);
        }
        let (event, out) = {
            let mut inner = self.lock();
            let mode = self.mode;
            let t = inner.find(ticket_id).ok_or_else(|| QueueError::UnknownTicket(ticket_id.into()))?;
            match (t.status, mode) {
                (TicketStatus::Resolved, _) => return Err(QueueError::UnknownTicket(ticket_id.into())),
                (TicketStatus::Claimed, _) if t.claimant.as_deref() != Some(supervisor) => {
                    return Err(QueueError::NotClaimant(ticket_id.into()))
                }
                (TicketStatus::Open, SupervisorMode::Multi) => return Err(QueueError::NotClaimed(ticket_id.into())),
                _ => {}
            }
            let out = match apply(t) {
                Ok(out) => out,
                Err(e) => return Ok(Err(e)),
            };
            t.status = TicketStatus::Resolved;
            if t.claimant.is_none() {
                t.claimant = Some(supervisor.to_string());
            }
            t.resolved_at = Some(now.max(t.created_at));
            let latency_ms = t.latency_ms().unwrap_or(0);
            (QueueEvent::Resolved { ticket: t.clone(), latency_ms }, out)
        };
        self.notify(&event);
        Ok(Ok((event.ticket().clone(), out)))
    }

    /// `resolve_with` without a side effect.
    pub fn resolve(&self, ticket_id: &str, supervisor: &str, reply: &str, now: u64) -> Result<EscalationTicket, QueueError> {
        self.resolve_with(ticket_id, supervisor, reply, now, |_| Ok::<_, std::convert::Infallible>(()))
            .map(|r| match r {
                Ok((t, ())) => t,
                Err(never) => match never {},
            })
    }

    pub fn get(&self, ticket_id: &str) -> Option<EscalationTicket> {
        self.lock().find(ticket_id).cloned()
    }

    /// Unresolved tickets in creation order.
    pub fn pending(&self) -> Vec<EscalationTicket> {
        self.lock().tickets.iter().filter(|t| t.status != TicketStatus::Resolved).cloned().collect()
    }

    pub fn all(&self) -> Vec<EscalationTicket> {
        self.lock().tickets.clone()
    }

    pub fn counts(&self) -> QueueCounts {
        let inner = self.lock();
        let mut c = QueueCounts { enqueued: inner.tickets.len(), ..Default::default() };
        for t in &inner.tickets {
            match t.status {
                TicketStatus::Open => c.open += 1,
                TicketStatus::Claimed => c.claimed += 1,
                TicketStatus::Resolved => c.resolved += 1,
            }
        }
        c
    }

    /// Reinstates a ticket read back from a log, without notifying.
    pub fn restore(&self, ticket: EscalationTicket) {
        let mut inner = self.lock();
        match inner.find(&ticket.id) {
            Some(existing) => *existing = ticket,
            None => inner.tickets.push(ticket),
        }
    }
}

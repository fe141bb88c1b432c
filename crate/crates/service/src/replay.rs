//! Re-executes a recorded session log and checks it reproduces byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use iqa_core::config::Config;
use iqa_core::dialogue::{Engine, SessionEvent};
use iqa_core::supervisor::QueueEvent;
use serde::Serialize;

use crate::hub::{rebuild, Hub, HubError, HubOptions, Transcript};
use crate::log::{parse_log, LogRecord, RecordKind};
use crate::survey::SurveyResponse;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Divergence {
    /// 1-based line in the original log.
    pub line: usize,
    pub expected: Option<String>,
    pub actual: Option<String>,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub session: String,
    pub records: usize,
    pub warnings: Vec<String>,
    pub transcript: Transcript,
    pub divergence: Option<Divergence>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.divergence.is_none()
    }
}

/// The config snapshot at the head of a log.
pub fn log_config(path: &Path, text: &str) -> Result<Config, HubError> {
    let loaded = parse_log(path, text)?;
    Ok(rebuild(path, &loaded.records)?.config)
}

/// Drives a fresh in-memory hub with the inputs found in the log (teacher
/// text, claims, supervisor replies, survey) at their recorded times and
/// compares every produced line with the original.
pub fn verify_log(engine: Engine, path: &Path, text: &str) -> Result<VerifyReport, HubError> {
    let loaded = parse_log(path, text)?;
    let rebuilt = rebuild(path, &loaded.records)?;
    let (hub, _) = Hub::open(engine, HubOptions::in_memory(rebuilt.config))?;
    let id = rebuilt.session.id.clone();

    let resolvers: BTreeMap<String, String> = loaded
        .records
        .iter()
        .filter(|r| r.kind == RecordKind::Ticket)
        .filter_map(|r| match r.payload_as::<QueueEvent>() {
            Ok(QueueEvent::Resolved { ticket, .. }) => Some((ticket.id.clone(), ticket.claimant.unwrap_or_default())),
            _ => None,
        })
        .collect();

    let mut divergence = None;
    for (i, r) in loaded.records.iter().enumerate() {
        if let Err(e) = drive(&hub, &id, r, &resolvers) {
            divergence = Some(Divergence {
                line: i + 1,
                expected: Some(loaded.lines[i].clone()),
                actual: None,
                note: format!("re-execution failed: {e}"),
            });
            break;
        }
    }

    let produced = hub.memory_log(&id).ok().flatten().unwrap_or_default();
    if divergence.is_none() {
        let n = produced.len().max(loaded.lines.len());
        divergence = (0..n)
            .find(|&i| produced.get(i) != loaded.lines.get(i))
            .map(|i| Divergence {
                line: i + 1,
                expected: loaded.lines.get(i).cloned(),
                actual: produced.get(i).cloned(),
                note: "re-executed record differs".into(),
            });
    }
    let transcript = match hub.transcript(&id, None) {
        Ok(t) => t,
        Err(_) => Transcript { session: id.clone(), phase: rebuilt.session.phase, turns: rebuilt.session.turns },
    };
    Ok(VerifyReport { session: id, records: loaded.records.len(), warnings: loaded.warnings, transcript, divergence })
}

fn drive(hub: &Hub, id: &str, r: &LogRecord, resolvers: &BTreeMap<String, String>) -> Result<(), HubError> {
    let malformed = |e: serde_json::Error| HubError::Validation(e.to_string());
    match r.kind {
        RecordKind::Config => {}
        RecordKind::Turn => match r.payload_as::<SessionEvent>().map_err(malformed)? {
            SessionEvent::Opened { scenario, .. } => {
                hub.create_session_with(id, scenario, r.ts)?;
            }
            SessionEvent::TeacherTurn { teacher, .. } => {
                hub.post_utterance(id, &teacher.text, r.ts)?;
            }
            SessionEvent::SupervisorReply { ticket, turn } => {
                let by = resolvers.get(&ticket).map_or("supervisor", String::as_str);
                hub.resolve(&ticket, by, &turn.text, r.ts)?;
            }
            // Produced by the survey submission.
            SessionEvent::Closed { .. } => {}
        },
        RecordKind::Ticket => {
            if let QueueEvent::Claimed { ticket } = r.payload_as::<QueueEvent>().map_err(malformed)? {
                hub.claim(&ticket.id, ticket.claimant.as_deref().unwrap_or_default(), r.ts)?;
            }
        }
        RecordKind::Survey => {
            let s: SurveyResponse = r.payload_as().map_err(malformed)?;
            hub.submit_survey(id, s.answers, s.role, r.ts)?;
        }
    }
    Ok(())
}

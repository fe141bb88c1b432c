mod common;

use std::sync::Arc;
use std::thread;

use iqa_core::dialogue::{DialogueError, Outcome, Phase, Speaker};
use iqa_core::entity::Attribute;
use iqa_core::scenario::ScenarioSeed;
use iqa_core::supervisor::QueueError;
use iqa_service::survey::Role;
use iqa_service::HubError;

#[test]
fn scale_factor_question_end_to_end() {
    let hub = common::memory_hub();
    let created = hub.create_session(None, 10).unwrap();
    assert_eq!(created.phase, Phase::AwaitingTeacher);
    let k = ScenarioSeed::default().build().unwrap().scale_factor().unwrap();
    let r = hub.post_utterance(&created.session, "what is the scale factor ?", 20).unwrap();
    let Outcome::StudentReply { text } = r.outcome else { panic!("expected a reply") };
    assert!(text.contains(&k.to_string()) && text.contains("10 / 5"));
    assert_eq!(r.turns.len(), 2);
}

#[test]
fn custom_scenario_seed() {
    let hub = common::memory_hub();
    let seed = ScenarioSeed::from_json(r#"{"left":{"length":"4"},"right":{"length":"6"}}"#).unwrap();
    let id = hub.create_session(Some(&seed), 10).unwrap().session;
    let r = hub.post_utterance(&id, "what is the scale factor ?", 20).unwrap();
    assert_eq!(r.outcome, Outcome::StudentReply { text: "The scale factor is 1.5 because 6 / 4 = 1.5.".into() });
    let bad = ScenarioSeed::from_json(r#"{"left":{"length":"4","width":"2"},"right":{"length":"8","width":"5"}}"#).unwrap();
    assert!(matches!(hub.create_session(Some(&bad), 10), Err(HubError::Scenario(_))));
    assert!(hub.session(&id).unwrap().scenario.left.contains_key(&Attribute::Length));
}

#[test]
fn phase_contract() {
    let hub = common::memory_hub();
    let id = hub.create_session(None, 10).unwrap().session;
    let r = hub.post_utterance(&id, "zzq qqz zqz", 20).unwrap();
    assert_eq!(r.phase, Phase::AwaitingSupervisor);
    let err = hub.post_utterance(&id, "what is the scale factor ?", 30).unwrap_err();
    assert_eq!(err.code(), "wrong_phase");
    assert!(matches!(err, HubError::Dialogue(DialogueError::WrongPhase(Phase::AwaitingSupervisor))));
    assert_eq!(hub.post_utterance("nope", "hi", 30).unwrap_err().code(), "unknown_session");
}

#[test]
fn survey_rules() {
    let hub = common::memory_hub();
    let id = hub.create_session(None, 10).unwrap().session;
    let err = hub.submit_survey(&id, vec![5, 4, 3, 2, 1], Role::Teacher, 20).unwrap_err();
    assert_eq!(err.code(), "validation");
    assert_eq!(hub.phase(&id).unwrap(), Phase::AwaitingTeacher);
    hub.submit_survey(&id, vec![5, 4, 3, 2, 1, 1], Role::Teacher, 20).unwrap();
    assert_eq!(hub.phase(&id).unwrap(), Phase::Closed);
    assert_eq!(hub.submit_survey(&id, vec![1; 6], Role::Teacher, 30).unwrap_err().code(), "survey_exists");
    assert_eq!(hub.survey(&id).unwrap().unwrap().answers, vec![5, 4, 3, 2, 1, 1]);
    assert_eq!(hub.post_utterance(&id, "hello", 40).unwrap_err().code(), "session_closed");
}

#[test]
fn ticket_flow_through_the_hub() {
    let hub = common::memory_hub();
    let a = hub.create_session(None, 10).unwrap().session;
    let b = hub.create_session(None, 11).unwrap().session;
    hub.post_utterance(&a, "sit down", 20).unwrap();
    hub.post_utterance(&b, "zzq qqz zqz", 21).unwrap();
    let pending: Vec<String> = hub.pending_tickets().into_iter().map(|t| t.id).collect();
    assert_eq!(pending, [format!("{a}-t1"), format!("{b}-t1")]);

    let r = hub.resolve(&pending[0], "sup", "Okay, I am sitting down.", 50).unwrap();
    assert_eq!((r.phase, r.latency_ms, r.turn.speaker), (Phase::AwaitingTeacher, 30, Speaker::SupervisorAsStudent));
    assert!(matches!(
        hub.resolve(&pending[0], "sup", "again", 60),
        Err(HubError::Queue(QueueError::UnknownTicket(_)))
    ));
    assert_eq!(hub.resolve(&pending[1], "sup", " ", 60).unwrap_err().code(), "empty_reply");
    assert_eq!(hub.pending_tickets().len(), 1);
    let before = hub.session(&a).unwrap().scenario;
    hub.post_utterance(&a, "what is the scale factor ?", 70).unwrap();
    assert_eq!(hub.session(&a).unwrap().scenario, before);
}

#[test]
fn concurrent_turns_are_serialized() {
    let hub = Arc::new(common::memory_hub());
    let id = hub.create_session(None, 10).unwrap().session;
    let results: Vec<Result<(), String>> = thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let (hub, id) = (hub.clone(), id.clone());
                s.spawn(move || {
                    hub.post_utterance(&id, "what is the scale factor ?", 100 + i).map(|_| ()).map_err(|e| e.code().to_string())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let ok = results.iter().filter(|r| r.is_ok()).count();
    assert!(ok >= 1);
    assert!(results.iter().all(|r| r.as_ref().err().is_none_or(|c| c == "busy")));
    let turns = hub.transcript(&id, None).unwrap().turns;
    assert_eq!(turns.len(), 1 + 2 * ok);
    assert!(turns.windows(2).all(|w| w[0].id < w[1].id));
}

#[test]
fn transcript_since() {
    let hub = common::memory_hub();
    let id = hub.create_session(None, 10).unwrap().session;
    hub.post_utterance(&id, "what is the scale factor ?", 20).unwrap();
    assert_eq!(hub.transcript(&id, None).unwrap().turns.len(), 3);
    let tail = hub.transcript(&id, Some(0)).unwrap().turns;
    assert_eq!(tail.iter().map(|t| t.id).collect::<Vec<_>>(), [1, 2]);
    assert!(hub.transcript(&id, Some(2)).unwrap().turns.is_empty());
}

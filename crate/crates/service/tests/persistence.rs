mod common;

use std::fs;

use iqa_core::dialogue::{Outcome, Phase};
use iqa_core::shipped::shipped_engine;
use iqa_core::supervisor::TicketStatus;
use iqa_service::log::session_path;
use iqa_service::replay::verify_log;

#[test]
fn empty_directory_gives_empty_registry() {
    let dir = tempfile::tempdir().unwrap();
    let (hub, warnings) = common::disk_hub(dir.path());
    assert!(hub.session_ids().is_empty() && warnings.is_empty());
    let (hub, _) = common::disk_hub(&dir.path().join("missing"));
    assert!(hub.session_ids().is_empty());
}

#[test]
fn restart_reproduces_transcript_and_phase() {
    let dir = tempfile::tempdir().unwrap();
    let (hub, _) = common::disk_hub(dir.path());
    let id = hub.create_session(None, 1).unwrap().session;
    for (i, t) in ["what is the scale factor ?", "the height of the left box is 4", "what is the volume of the right prism ?"]
        .iter()
        .enumerate()
    {
        hub.post_utterance(&id, t, 10 + i as u64).unwrap();
    }
    let before = hub.session(&id).unwrap();
    drop(hub);

    let (hub, warnings) = common::disk_hub(dir.path());
    assert!(warnings.is_empty());
    assert_eq!(hub.session(&id).unwrap(), before);
    assert_eq!(hub.transcript(&id, None).unwrap().turns.len(), 7);
    let next = hub.create_session(None, 99).unwrap().session;
    assert_ne!(next, id);
    hub.post_utterance(&id, "what is the scale factor ?", 100).unwrap();
    assert_eq!(hub.session(&id).unwrap().turns.len(), 9);
}

#[test]
fn truncated_tail_is_dropped_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let (hub, _) = common::disk_hub(dir.path());
    let id = hub.create_session(None, 1).unwrap().session;
    for t in ["what is the scale factor ?", "Look at this diagram", "what is the volume of the right prism ?"] {
        hub.post_utterance(&id, t, 5).unwrap();
    }
    let turns = hub.session(&id).unwrap().turns;
    drop(hub);

    let path = session_path(dir.path(), &id);
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str(r#"{"v":1,"seq":5,"session":"s1","kind":"tu"#);
    fs::write(&path, &text).unwrap();

    let (hub, warnings) = common::disk_hub(dir.path());
    assert_eq!(warnings.len(), 1, "{warnings:?}");
    assert_eq!(hub.session(&id).unwrap().turns, turns);
    assert!(fs::read_to_string(&path).unwrap().ends_with("}\n"));
    hub.post_utterance(&id, "what is the scale factor ?", 9).unwrap();
    drop(hub);
    assert!(common::disk_hub(dir.path()).1.is_empty());
}

#[test]
fn open_tickets_come_back_resolved_ones_do_not() {
    let dir = tempfile::tempdir().unwrap();
    let (hub, _) = common::disk_hub(dir.path());
    let a = hub.create_session(None, 1).unwrap().session;
    let b = hub.create_session(None, 2).unwrap().session;
    let Outcome::Escalated { ticket: ta } = hub.post_utterance(&a, "zzq qqz zqz", 3).unwrap().outcome else { panic!() };
    let Outcome::Escalated { ticket: tb } = hub.post_utterance(&b, "sit down", 4).unwrap().outcome else { panic!() };
    hub.resolve(&tb, "sup", "Okay.", 8).unwrap();
    drop(hub);

    let (hub, _) = common::disk_hub(dir.path());
    let pending = hub.pending_tickets();
    assert_eq!(pending.len(), 1);
    assert_eq!((pending[0].id.as_str(), pending[0].status), (ta.as_str(), TicketStatus::Open));
    assert_eq!(hub.queue().get(&tb).unwrap().status, TicketStatus::Resolved);
    assert_eq!(hub.phase(&a).unwrap(), Phase::AwaitingSupervisor);
    assert_eq!(hub.phase(&b).unwrap(), Phase::AwaitingTeacher);
    let r = hub.resolve(&ta, "sup", "I doubled it.", 20).unwrap();
    assert_eq!(r.latency_ms, 17);
}

#[test]
fn golden_log_is_reproduced_byte_for_byte() {
    let hub = common::memory_hub();
    let id = common::golden_script(&hub);
    let produced = hub.memory_log(&id).unwrap().unwrap();
    let golden: Vec<&str> = common::GOLDEN.lines().collect();
    assert_eq!(produced, golden);

    let report = verify_log(shipped_engine(), std::path::Path::new("golden"), common::GOLDEN).unwrap();
    assert!(report.ok(), "{:?}", report.divergence);
    assert_eq!(report.records, 9);
    assert_eq!(report.transcript.phase, Phase::Closed);
    assert_eq!(report.transcript.turns.len(), 5);
}

#[test]
fn tampered_log_diverges() {
    let tampered = common::GOLDEN.replace("The scale factor is 2", "The scale factor is 3");
    let report = verify_log(shipped_engine(), std::path::Path::new("golden"), &tampered).unwrap();
    let d = report.divergence.expect("tampering must be caught");
    assert_eq!(d.line, 3);
}

#[test]
fn logs_survive_a_disk_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (hub, _) = common::disk_hub(dir.path());
    let id = common::golden_script(&hub);
    drop(hub);
    let text = fs::read_to_string(session_path(dir.path(), &id)).unwrap();
    assert_eq!(text, common::GOLDEN);
}

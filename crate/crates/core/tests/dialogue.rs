use iqa_core::dialogue::{DialogueError, Outcome, Phase, Session, SessionEvent, Speaker, TurnOutcome};
use iqa_core::entity::{Attribute, FigureRef};
use iqa_core::rational::Rational;
use iqa_core::scenario::{Answer, ScenarioSeed};
use iqa_core::shipped::shipped_engine;
use iqa_core::uncertainty::{Trigger, UncertaintyConfig};

fn fresh() -> Session {
    Session::open("s1", ScenarioSeed::default().build().unwrap(), UncertaintyConfig::default(), 1_000).0
}

fn escalated(s: &Session, text: &str) -> (Session, String, Trigger) {
    let (next, event) = s.handle_teacher_turn(&shipped_engine(), text, 2_000).unwrap();
    let ticket = event.ticket().expect("turn should escalate").clone();
    (next, ticket.id, ticket.diagnostics.triggered_by)
}

#[test]
fn opens_with_a_student_greeting() {
    let s = fresh();
    assert_eq!(s.phase, Phase::AwaitingTeacher);
    assert_eq!(s.turns.len(), 1);
    assert_eq!(s.turns[0].speaker, Speaker::Student);
}

#[test]
fn scale_factor_question_gets_a_derived_answer() {
    let state = ScenarioSeed::default().build().unwrap();
    // Oracle: the seed's only doubly-known side is length, 10 on the right and 5 on the left.
    let k = &Rational::integer(10) / &Rational::integer(5);
    assert_eq!(state.query(None, Attribute::ScaleFactor), Answer::Known(k.clone()));

    let (s, event) = fresh().handle_teacher_turn(&shipped_engine(), "what is the scale factor ?", 2_000).unwrap();
    let Some(Outcome::StudentReply { text }) = event.outcome() else { panic!("expected a reply, got {event:?}") };
    assert!(text.contains(&k.to_string()) && text.contains("10 / 5"), "{text}");
    assert_eq!(s.turns.len(), 3);
    let analysis = s.turns[1].analysis.as_ref().unwrap();
    assert_eq!(analysis.gate.triggered_by, Trigger::None);
    assert_eq!(s.turns[2].text, text);
}

#[test]
fn gibberish_escalates_on_act_uncertainty() {
    let (s, ticket, trigger) = escalated(&fresh(), "zzq qqz zqz");
    assert_eq!(trigger, Trigger::ActUncertainty);
    assert_eq!(ticket, "s1-t1");
    assert_eq!(s.phase, Phase::AwaitingSupervisor);
    let a = s.turns.last().unwrap().analysis.as_ref().unwrap();
    assert!(a.act.predictive_entropy > UncertaintyConfig::default().tau_act);
}

#[test]
fn other_has_no_template() {
    let (_, _, trigger) = escalated(&fresh(), "sit down");
    assert_eq!(trigger, Trigger::NoTemplate);
}

#[test]
fn unresolved_figure_forces_entity_escalation() {
    let (s, _, trigger) = escalated(&fresh(), "what is the width ?");
    assert_eq!(trigger, Trigger::EntityUncertainty);
    assert_eq!(s.turns.last().unwrap().analysis.as_ref().unwrap().entity_confidence, 0.0);
}

#[test]
fn figure_carries_forward_from_earlier_turns() {
    let engine = shipped_engine();
    let (s, _) = fresh().handle_teacher_turn(&engine, "what is the volume of the right prism ?", 2_000).unwrap();
    let (s, event) = s.handle_teacher_turn(&engine, "what is the width ?", 3_000).unwrap();
    assert_eq!(event.outcome(), Some(Outcome::StudentReply { text: "The width of the right prism is 6.".into() }));
    assert_eq!(s.turns[3].analysis.as_ref().unwrap().figure, Some(FigureRef::Right));
}

#[test]
fn conflicting_fact_escalates_and_commits_nothing() {
    let engine = shipped_engine();
    let s = fresh();
    let (after, _, trigger) = escalated(&s, "the width of the right prism is 7");
    assert_eq!(trigger, Trigger::ScenarioConflict);
    assert_eq!(after.scenario, s.scenario);

    let (ok, event) = s.handle_teacher_turn(&engine, "the height of the left box is 4", 2_000).unwrap();
    assert!(matches!(event, SessionEvent::TeacherTurn { ref committed, .. } if committed.len() == 1));
    assert_eq!(ok.scenario.log.len(), s.scenario.log.len() + 1);
}

#[test]
fn supervisor_reply_resumes_without_touching_the_scenario() {
    let (s, ticket, _) = escalated(&fresh(), "zzq qqz zqz");
    assert!(matches!(
        s.handle_teacher_turn(&shipped_engine(), "what is the scale factor ?", 3_000),
        Err(DialogueError::WrongPhase(Phase::AwaitingSupervisor))
    ));
    let (resumed, _) = s.apply_supervisor_reply(&ticket, "I think it doubles", 4_000).unwrap();
    assert_eq!(resumed.phase, Phase::AwaitingTeacher);
    assert_eq!(resumed.scenario, s.scenario);
    let last = resumed.turns.last().unwrap();
    assert_eq!((last.speaker, last.reply_to), (Speaker::SupervisorAsStudent, Some(1)));

    assert!(matches!(resumed.apply_supervisor_reply(&ticket, "again", 5_000), Err(DialogueError::WrongPhase(_))));
    assert!(matches!(s.apply_supervisor_reply("s1-t9", "hi", 5_000), Err(DialogueError::UnknownTicket(_))));
    assert!(matches!(s.apply_supervisor_reply(&ticket, "  ", 5_000), Err(DialogueError::EmptyReply)));
}

#[test]
fn closed_sessions_reject_input() {
    let (closed, _) = fresh().close(9_000).unwrap();
    assert!(matches!(
        closed.handle_teacher_turn(&shipped_engine(), "hello", 9_001),
        Err(DialogueError::SessionClosed)
    ));
    let (waiting, _, _) = escalated(&fresh(), "zzq qqz zqz");
    assert!(matches!(waiting.close(9_000), Err(DialogueError::WrongPhase(_))));
}

#[test]
fn events_replay_to_the_same_session() {
    let engine = shipped_engine();
    let (s0, open) = Session::open("s9", ScenarioSeed::default().build().unwrap(), UncertaintyConfig::default(), 5);
    let mut events = vec![open];
    let mut s = s0;
    for (i, text) in ["what is the scale factor ?", "zzq qqz zqz", "the height of the left box is 4"].iter().enumerate() {
        if s.phase == Phase::AwaitingSupervisor {
            let id = s.open_ticket.as_ref().unwrap().id.clone();
            let (n, e) = s.apply_supervisor_reply(&id, "I multiplied by two", 10 + i as u64).unwrap();
            events.push(e);
            s = n;
        }
        let (n, e) = s.handle_teacher_turn(&engine, text, 10 + i as u64).unwrap();
        events.push(e);
        s = n;
    }
    assert_eq!(Session::from_events(&events).unwrap(), s);

    // Re-running the same script yields byte-identical events.
    let json = |evs: &[SessionEvent]| serde_json::to_string(evs).unwrap();
    let decoded: Vec<SessionEvent> = serde_json::from_str(&json(&events)).unwrap();
    assert_eq!(json(&decoded), json(&events));
}

#[test]
fn every_escalation_carries_exactly_one_ticket() {
    let engine = shipped_engine();
    let mut s = fresh();
    let mut tickets = 0;
    for text in ["zzq qqz zqz", "sit down", "what is the width ?", "Close your books", "what is the scale factor ?"] {
        if let Some(t) = s.open_ticket.clone() {
            s = s.apply_supervisor_reply(&t.id, "ok", 1).unwrap().0;
        }
        let (n, e) = s.handle_teacher_turn(&engine, text, 1).unwrap();
        let analysis = n.turns.iter().rev().find_map(|t| t.analysis.clone()).unwrap();
        match &e {
            SessionEvent::TeacherTurn { outcome: TurnOutcome::Escalated { ticket }, .. } => {
                tickets += 1;
                assert!(analysis.gate.escalates());
                assert_eq!(ticket.diagnostics.act.mean_probs.len(), 4);
                assert_eq!(n.open_ticket.as_ref(), Some(ticket));
            }
            _ => assert!(!analysis.gate.escalates()),
        }
        s = n;
    }
    assert_eq!(tickets, 4);
}

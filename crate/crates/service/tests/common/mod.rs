#![allow(dead_code)]

use iqa_core::config::Config;
use iqa_core::shipped::shipped_engine;
use iqa_service::survey::Role;
use iqa_service::{Hub, HubOptions};

pub const GOLDEN: &str = include_str!("../golden/session.jsonl");

pub fn memory_hub() -> Hub {
    Hub::open(shipped_engine(), HubOptions::in_memory(Config::default())).unwrap().0
}

pub fn disk_hub(dir: &std::path::Path) -> (Hub, Vec<String>) {
    let opts = HubOptions { log_dir: Some(dir.to_path_buf()), ..HubOptions::in_memory(Config::default()) };
    Hub::open(shipped_engine(), opts).unwrap()
}

/// The reference session: a scale-factor question, gibberish that escalates,
/// the supervisor's answer and the closing survey.
pub fn golden_script(hub: &Hub) -> String {
    let id = hub.create_session(None, 1_000).unwrap().session;
    hub.post_utterance(&id, "What is the scale factor?", 2_000).unwrap();
    let escalated = hub.post_utterance(&id, "zzq qqz zqz", 3_000).unwrap();
    let iqa_core::dialogue::Outcome::Escalated { ticket } = escalated.outcome else { panic!("gibberish must escalate") };
    hub.resolve(&ticket, "sup1", "I multiplied the length by two.", 4_500).unwrap();
    hub.submit_survey(&id, vec![5, 4, 3, 4, 3, 5], Role::Teacher, 6_000).unwrap();
    id
}

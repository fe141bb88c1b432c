//! Deterministically trained default models and the reference fixture suites.
//!
//! Nothing is stored on disk: the shipped classifier and relation scorer are
//! retrained from fixed generator seeds the first time they are requested.

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{generate_relation_corpus, generate_synthetic};
use crate::dialogue::{Engine, TemplateSet};
use crate::entity::{extract_entities, Attribute, RelationRecord, RelationScorer, RelationTrainConfig};
use crate::nlu::{normalize, ActClassifier, ActModel, DialogueAct, TrainConfig};
use crate::rational::Rational;
use crate::uncertainty::{ensemble_classify, UncertaintyConfig};

pub const CORPUS_SEED: u64 = 7;
pub const CORPUS_PER_CLASS: usize = 100;
pub const RELATION_SEED: u64 = 11;
pub const RELATION_SENTENCES: usize = 150;

pub fn shipped_corpus() -> Vec<(String, DialogueAct)> {
    generate_synthetic(CORPUS_SEED, CORPUS_PER_CLASS).expect("non-empty request")
}

pub fn shipped_relation_corpus() -> Vec<RelationRecord> {
    generate_relation_corpus(RELATION_SEED, RELATION_SENTENCES).expect("non-empty request")
}

pub fn shipped_classifier() -> Arc<ActClassifier> {
    static CELL: OnceLock<Arc<ActClassifier>> = OnceLock::new();
    CELL.get_or_init(|| {
        Arc::new(ActClassifier::train(&shipped_corpus(), &TrainConfig::default()).expect("shipped corpus trains"))
    })
    .clone()
}

pub fn shipped_scorer() -> Arc<RelationScorer> {
    static CELL: OnceLock<Arc<RelationScorer>> = OnceLock::new();
    CELL.get_or_init(|| {
        Arc::new(
            RelationScorer::train(&shipped_relation_corpus(), &RelationTrainConfig::default())
                .expect("shipped relation corpus trains"),
        )
    })
    .clone()
}

pub fn shipped_engine() -> Engine {
    Engine {
        classifier: shipped_classifier(),
        scorer: shipped_scorer(),
        templates: Arc::new(TemplateSet::default()),
    }
}

/// The nine single-utterance examples act examples used as fixtures.
pub const ACT_FIXTURES: [(&str, DialogueAct); 9] = [
    ("How did you get that answer?", DialogueAct::Probing),
    ("Explain to me how you got that expression?", DialogueAct::Probing),
    ("What does n represent in terms of the diagram?", DialogueAct::Probing),
    ("Why is it staying the same?", DialogueAct::Probing),
    ("What is 3x5?", DialogueAct::Factual),
    ("Does this picture show ½ or ¼?", DialogueAct::Factual),
    ("What do you subtract first?", DialogueAct::Factual),
    ("The answer is three, right?", DialogueAct::Expository),
    ("Look at this diagram", DialogueAct::Expository),
];

pub struct RelationFixture {
    pub text: &'static str,
    pub attribute: Attribute,
    pub value: Option<&'static str>,
    pub label: bool,
}

/// The entity-extraction table: (attribute, value) pairings and their labels.
pub const RELATION_FIXTURES: [RelationFixture; 4] = [
    RelationFixture {
        text: "The length of the object is 5, what is the width?",
        attribute: Attribute::Length,
        value: Some("5"),
        label: true,
    },
    RelationFixture { text: "What is the scale factor?", attribute: Attribute::ScaleFactor, value: None, label: false },
    RelationFixture {
        text: "No, the length is not 5, the width is.",
        attribute: Attribute::Width,
        value: Some("5"),
        label: true,
    },
    RelationFixture {
        text: "No, the length is not 5, the width is.",
        attribute: Attribute::Length,
        value: Some("5"),
        label: false,
    },
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureRow {
    pub input: String,
    pub expected: String,
    pub got: String,
    pub score: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureReport {
    pub suite: String,
    pub rows: Vec<FixtureRow>,
    pub passed: usize,
    pub total: usize,
    pub elapsed_ms: f64,
}

impl FixtureReport {
    fn new(suite: &str, rows: Vec<FixtureRow>, started: Instant) -> Self {
        let passed = rows.iter().filter(|r| r.pass).count();
        Self {
            suite: suite.to_string(),
            total: rows.len(),
            passed,
            rows,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        }
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{}: {}/{} ({:.1} ms)\n", self.suite, self.passed, self.total, self.elapsed_ms);
        for r in &self.rows {
            out.push_str(&format!(
                "  [{}] {:<52} expected {:<14} got {:<14} {:.3}\n",
                if r.pass { "ok" } else { "FAIL" },
                r.input,
                r.expected,
                r.got,
                r.score
            ));
        }
        out
    }
}

/// Act fixtures; `score` is the predictive entropy of the ensemble.
pub fn eval_act_fixtures(model: &dyn ActModel, cfg: &UncertaintyConfig) -> FixtureReport {
    let started = Instant::now();
    let rows = ACT_FIXTURES
        .iter()
        .map(|(text, expected)| {
            let fv = model.featurizer().featurize(&normalize(text));
            let (got, score) = match ensemble_classify(model, &fv, cfg) {
                Ok(d) => (d.act().to_string(), d.predictive_entropy),
                Err(e) => (format!("error: {e}"), f64::NAN),
            };
            FixtureRow { input: text.to_string(), pass: got == expected.as_str(), expected: expected.to_string(), got, score }
        })
        .collect();
    FixtureReport::new("act-fixtures", rows, started)
}

/// Relation fixtures; `score` is the scorer's probability for the pairing.
pub fn eval_relation_fixtures(scorer: &RelationScorer) -> FixtureReport {
    let started = Instant::now();
    let rows = RELATION_FIXTURES
        .iter()
        .map(|fx| {
            let value = fx.value.map(|v| Rational::parse_token(v).expect("fixture values parse"));
            let text = normalize(fx.text);
            let ann = extract_entities(&text);
            let found = scorer
                .score_relations(&text, &ann)
                .ok()
                .and_then(|cands| cands.into_iter().find(|c| c.attribute == fx.attribute && c.value == value));
            let (got, score) = match found {
                Some(c) => (if c.label { "true" } else { "false" }.to_string(), c.confidence),
                None => ("missing".to_string(), f64::NAN),
            };
            let pair = format!("({}, {})", fx.attribute.noun(), fx.value.unwrap_or("_"));
            FixtureRow {
                input: format!("{} {pair}", fx.text),
                expected: fx.label.to_string(),
                pass: got == fx.label.to_string(),
                got,
                score,
            }
        })
        .collect();
    FixtureReport::new("relation-fixtures", rows, started)
}

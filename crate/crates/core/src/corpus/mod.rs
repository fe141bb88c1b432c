//! Training-data bootstrapping: labeling functions, a synthetic template
//! grammar, and the stratified cross-validation harness.

mod cv;
mod labeling;
mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entity::EntityError;
use crate::nlu::{normalize, DialogueAct, NluError};

pub use cv::{
    cross_validate, cross_validate_relations, stratified_folds, ClassMetrics, Confusion, CvReport,
    FoldReport, RelationCvReport, REFERENCE_ACT_F1, REFERENCE_RELATION_PRF,
};
pub use labeling::{label_corpus, shipped_labeling_functions, LabelReport, LabelingFunction};
pub use synthetic::{
    generate_relation_corpus, generate_synthetic, production_disjointness, Production, PRODUCTIONS,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("at least one labeling function is required")]
    NoLabelingFunctions,
    #[error("n must be at least 1")]
    EmptyRequest,
    #[error("class {act} has {have} samples but {k} folds need at least {k}")]
    TooFewSamples { act: String, have: usize, k: usize },
    #[error("need at least 2 folds, got {0}")]
    BadFoldCount(usize),
    #[error("corpus line {line}: {message}")]
    BadLine { line: usize, message: String },
    #[error(transparent)]
    Nlu(#[from] NluError),
    #[error(transparent)]
    Entity(#[from] EntityError),
}

/// One line of a corpus file: `{"text": ..., "label": ...}`; the label may be absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<DialogueAct>,
}

impl CorpusRecord {
    pub fn parse_jsonl(input: &str) -> Result<Vec<Self>, CorpusError> {
        input
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| CorpusError::BadLine { line: i + 1, message: e.to_string() })
            })
            .collect()
    }

    pub fn to_jsonl(records: &[Self]) -> String {
        records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    /// Normalized `(text, label)` pairs for every labelled record.
    pub fn labelled(records: &[Self]) -> Vec<(String, DialogueAct)> {
        records
            .iter()
            .filter_map(|r| r.label.map(|l| (normalize(&r.text), l)))
            .collect()
    }
}

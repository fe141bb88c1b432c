//! Utterance normalization, featurization and dialogue-act classification.

mod classifier;
mod features;
mod normalize;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classifier::{
    corpus_hash, ActClassifier, ActModel, DropoutMask, TrainConfig, TrainingMeta, CLASSIFIER_MAGIC,
    CLASSIFIER_VERSION,
};
pub use features::{fnv1a, CollisionStats, FeatureVector, Featurizer, Flag, DEFAULT_FEATURE_DIM};
pub(crate) use features::is_number_token;
pub use normalize::{normalize, tokens_with_spans};

/// IQA question categories. The variant order is the tie-break order at argmax.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialogueAct {
    Probing,
    Factual,
    Expository,
    Other,
}

pub const NUM_ACTS: usize = 4;

/// Probability vector indexed by `DialogueAct::index`.
pub type ActProbs = [f64; NUM_ACTS];

impl DialogueAct {
    pub const ALL: [DialogueAct; NUM_ACTS] = [
        DialogueAct::Probing,
        DialogueAct::Factual,
        DialogueAct::Expository,
        DialogueAct::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DialogueAct::Probing => "probing",
            DialogueAct::Factual => "factual",
            DialogueAct::Expository => "expository",
            DialogueAct::Other => "other",
        }
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(probs: &[f64]) -> Self {
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate().take(NUM_ACTS) {
            if p > probs[best] {
                best = i;
            }
        }
        Self::ALL[best]
    }
}

impl fmt::Display for DialogueAct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DialogueAct {
    type Err = NluError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| NluError::UnknownAct(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum NluError {
    #[error("classifier has no trained weights")]
    UntrainedClassifier,
    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),
    #[error("feature index {index} outside feature space of size {dim}")]
    FeatureOutOfRange { index: u32, dim: usize },
    #[error("dropout mask covers {mask} features but vector has {features}")]
    MaskLength { mask: usize, features: usize },
    #[error("unknown dialogue act {0:?}")]
    UnknownAct(String),
    #[error("classifier file: {0}")]
    Format(String),
    #[error("unsupported classifier format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

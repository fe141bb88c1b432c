//! Binary logistic scorer for (attribute, value) pairs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{extract_entities, Attribute, EntityAnnotation, EntityError};
use crate::nlu::{normalize, tokens_with_spans};
use crate::rational::Rational;

pub const PAIR_FEATURE_NAMES: [&str; 14] = [
    "attr_before_value",
    "gap_over_10",
    "gap_at_most_3",
    "negation_between",
    "copula_between",
    "attribute_between",
    "value_negated",
    "attribute_elliptical",
    "clause_break_between",
    "nearest_attribute",
    "attribute_queried",
    "negated_value_then_attribute",
    "value_between",
    "attribute_then_copula_then_value",
];
const NUM_PAIR_FEATURES: usize = PAIR_FEATURE_NAMES.len();

const NEGATIONS: &[&str] = &["not", "isn't", "aren't", "never", "wasn't", "isnt"];
const COPULAS: &[&str] = &["is", "are", "was", "were", "equals", "=", "'s", "be"];
const BREAKS: &[&str] = &[",", ".", ";", "?", "!", "and", "but", "so", "then"];
const WH: &[&str] = &["what", "how", "which", "find"];

/// Features for pairing attribute mention `ai` with value mention `vi`.
pub fn pair_features(words: &[&str], ann: &EntityAnnotation, ai: usize, vi: usize) -> [f64; NUM_PAIR_FEATURES] {
    let attr = &ann.attributes[ai];
    let value = &ann.values[vi];
    let (a_start, a_end) = attr.tokens;
    let v = value.token;
    let before = a_end <= v;
    let (lo, hi) = if before { (a_end, v) } else { (v + 1, a_start) };
    let between = &words[lo.min(hi)..hi];
    let gap = between.len();
    let any = |set: &[&str]| between.iter().any(|w| set.contains(w));

    let value_negated = v > 0 && NEGATIONS.contains(&words[v - 1]);
    let after_attr = words.get(a_end).copied();
    let after_after = words.get(a_end + 1).copied();
    let elliptical = after_attr.is_some_and(|w| COPULAS.contains(&w))
        && after_after.is_none_or(|w| BREAKS.contains(&w));
    let distance = |a: &super::AttributeMention| {
        if a.tokens.1 <= v {
            (v - a.tokens.1 + 1, 0)
        } else {
            (a.tokens.0 - v, 1)
        }
    };
    let mine = distance(attr);
    let nearest = ann
        .attributes
        .iter()
        .enumerate()
        .all(|(j, other)| j == ai || distance(other) > mine);
    let queried = (a_start.saturating_sub(3)..a_start).any(|k| WH.contains(&words[k]))
        && !(a_start.saturating_sub(3)..a_start).any(|k| ann.values.iter().any(|x| x.token == k));
    let attribute_between = ann.attributes.iter().enumerate().any(|(j, other)| {
        j != ai && other.tokens.0 >= lo && other.tokens.1 <= hi
    });
    let value_between = ann.values.iter().any(|x| x.token >= lo && x.token < hi);
    let direct = before
        && between.iter().filter(|w| !matches!(**w, "the" | "of" | "object" | "figure" | "left" | "right")).all(|w| COPULAS.contains(w))
        && any(COPULAS);

    let b = |x: bool| if x { 1.0 } else { 0.0 };
    [
        b(before),
        gap as f64 / 10.0,
        b(gap <= 3),
        b(any(NEGATIONS)),
        b(any(COPULAS)),
        b(attribute_between),
        b(value_negated),
        b(elliptical),
        b(any(BREAKS)),
        b(nearest),
        b(queried),
        b(value_negated && !before),
        b(value_between),
        b(direct),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationCandidate {
    pub attribute: Attribute,
    pub attribute_mention: usize,
    pub value: Option<Rational>,
    pub value_mention: Option<usize>,
    pub label: bool,
    /// Probability that the pairing holds.
    pub confidence: f64,
}

impl RelationCandidate {
    /// Probability mass behind the assigned label, i.e. `max(p, 1 - p)`.
    pub fn certainty(&self) -> f64 {
        self.confidence.max(1.0 - self.confidence)
    }
}

/// One line of the relation corpus file. `value: null` marks a valueless pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationRecord {
    pub text: String,
    pub attribute: Attribute,
    pub value: Option<Rational>,
    pub label: bool,
}

impl RelationRecord {
    pub fn parse_jsonl(input: &str) -> Result<Vec<Self>, EntityError> {
        input
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| EntityError::BadRecord { line: i + 1, message: e.to_string() })
            })
            .collect()
    }

    pub fn to_jsonl(records: &[Self]) -> String {
        records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    /// Locates the pair in the record text and returns its features, or
    /// `None` for valueless records and pairs the extractor cannot find.
    pub fn features(&self) -> Option<[f64; NUM_PAIR_FEATURES]> {
        let value = self.value.as_ref()?;
        let text = normalize(&self.text);
        let ann = extract_entities(&text);
        let ai = ann.attributes.iter().position(|m| m.attribute == self.attribute)?;
        let vi = ann.values.iter().position(|m| &m.value == value)?;
        let words: Vec<&str> = tokens_with_spans(&text).into_iter().map(|(_, t)| t).collect();
        Some(pair_features(&words, &ann, ai, vi))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for RelationTrainConfig {
    fn default() -> Self {
        Self { epochs: 200, learning_rate: 0.2, l2: 1e-4, seed: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationScorer {
    pub format: String,
    pub version: u32,
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub seed: u64,
    pub training_pairs: usize,
}

const SCORER_FORMAT: &str = "iqa-relation-scorer";
const SCORER_VERSION: u32 = 1;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl RelationScorer {
    pub fn train(corpus: &[RelationRecord], config: &RelationTrainConfig) -> Result<Self, EntityError> {
        let samples: Vec<([f64; NUM_PAIR_FEATURES], bool)> =
            corpus.iter().filter_map(|r| r.features().map(|f| (f, r.label))).collect();
        let positives = samples.iter().filter(|(_, l)| *l).count();
        if positives == 0 || positives == samples.len() {
            return Err(EntityError::DegenerateCorpus(format!(
                "{positives} true of {} usable pairs; both labels are required",
                samples.len()
            )));
        }
        let mut weights = vec![0.0; NUM_PAIR_FEATURES];
        let mut bias = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let (x, y) = &samples[i];
                let z = bias + weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
                let g = sigmoid(z) - if *y { 1.0 } else { 0.0 };
                for (w, xi) in weights.iter_mut().zip(x) {
                    *w -= config.learning_rate * (g * xi + config.l2 * *w);
                }
                bias -= config.learning_rate * g;
            }
        }
        Ok(Self {
            format: SCORER_FORMAT.to_string(),
            version: SCORER_VERSION,
            feature_names: PAIR_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            weights,
            bias,
            seed: config.seed,
            training_pairs: samples.len(),
        })
    }

    pub fn probability(&self, features: &[f64; NUM_PAIR_FEATURES]) -> f64 {
        sigmoid(self.bias + self.weights.iter().zip(features).map(|(w, x)| w * x).sum::<f64>())
    }

    /// Scores a corpus record directly; valueless records score zero.
    pub fn predict_record(&self, record: &RelationRecord) -> f64 {
        if record.value.is_none() {
            return 0.0;
        }
        if let Some(f) = record.features() {
            return self.probability(&f);
        }
        0.0
    }

    /// One candidate per (attribute, value) mention pair, followed by a
    /// valueless candidate for every attribute mention left without a true
    /// pairing.
    pub fn score_relations(&self, text: &str, ann: &EntityAnnotation) -> Result<Vec<RelationCandidate>, EntityError> {
        ann.check_against(text)?;
        let words: Vec<&str> = tokens_with_spans(text).into_iter().map(|(_, t)| t).collect();
        let mut out = Vec::new();
        for (ai, attr) in ann.attributes.iter().enumerate() {
            for (vi, value) in ann.values.iter().enumerate() {
                let p = self.probability(&pair_features(&words, ann, ai, vi));
                out.push(RelationCandidate {
                    attribute: attr.attribute,
                    attribute_mention: ai,
                    value: Some(value.value.clone()),
                    value_mention: Some(vi),
                    label: p >= 0.5,
                    confidence: p,
                });
            }
        }
        for (ai, attr) in ann.attributes.iter().enumerate() {
            if !out.iter().any(|c| c.attribute_mention == ai && c.label) {
                out.push(RelationCandidate {
                    attribute: attr.attribute,
                    attribute_mention: ai,
                    value: None,
                    value_mention: None,
                    label: false,
                    confidence: 0.0,
                });
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scorer serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, EntityError> {
        let scorer: Self = serde_json::from_str(s).map_err(|e| EntityError::Format(e.to_string()))?;
        if scorer.format != SCORER_FORMAT {
            return Err(EntityError::Format(format!("unexpected format tag {:?}", scorer.format)));
        }
        if scorer.version != SCORER_VERSION {
            return Err(EntityError::Format(format!(
                "unsupported version {} (expected {SCORER_VERSION})",
                scorer.version
            )));
        }
        if scorer.weights.len() != NUM_PAIR_FEATURES {
            return Err(EntityError::Format(format!("expected {NUM_PAIR_FEATURES} weights")));
        }
        Ok(scorer)
    }
}

//! Hashed n-gram featurizer with a handful of reserved keyword flags.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::normalize::tokens_with_spans;

pub const DEFAULT_FEATURE_DIM: usize = 1 << 16;

/// Keyword flags occupy the first `Flag::COUNT` feature ids; hashed n-grams
/// fill the remaining space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Flag {
    Why,
    How,
    What,
    OtherInterrogative,
    Imperative,
    Number,
    QuestionMark,
    TagQuestion,
    AuxiliaryOpener,
    SecondPerson,
}

impl Flag {
    pub const COUNT: usize = 10;
    pub const ALL: [Flag; Flag::COUNT] = [
        Flag::Why,
        Flag::How,
        Flag::What,
        Flag::OtherInterrogative,
        Flag::Imperative,
        Flag::Number,
        Flag::QuestionMark,
        Flag::TagQuestion,
        Flag::AuxiliaryOpener,
        Flag::SecondPerson,
    ];

    pub fn id(self) -> u32 {
        self as u32
    }
}

const IMPERATIVE_VERBS: &[&str] = &[
    "look", "sit", "stand", "close", "open", "put", "take", "stop", "listen", "show", "tell",
    "write", "draw", "read", "turn", "get", "go", "come", "be", "pay", "hand", "line", "raise",
    "pick", "clean", "keep", "notice", "remember", "check", "consider", "explain", "describe",
];
const AUXILIARIES: &[&str] = &[
    "does", "do", "is", "are", "can", "could", "would", "will", "did", "was", "should", "has",
];
const TAG_WORDS: &[&str] = &["right", "correct", "ok", "okay", "yes", "yeah"];
const OTHER_WH: &[&str] = &["when", "where", "which", "who", "whose", "whom"];

pub(crate) fn is_number_token(tok: &str) -> bool {
    let mut saw_digit = false;
    for c in tok.chars() {
        if c.is_ascii_digit() {
            saw_digit = true;
        } else if c != '.' && c != '/' {
            return false;
        }
    }
    saw_digit && tok.chars().next().is_some_and(|c| c.is_ascii_digit())
}

/// Sparse, sorted feature vector. Indices are unique and ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn empty() -> Self {
        Self { indices: Vec::new(), values: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: u32) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    pub fn has_flag(&self, flag: Flag) -> bool {
        self.contains(flag.id())
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }
}

/// FNV-1a, 64 bit. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Featurizer {
    dim: usize,
}

impl Default for Featurizer {
    fn default() -> Self {
        Self { dim: DEFAULT_FEATURE_DIM }
    }
}

impl Featurizer {
    /// `dim` must leave room for at least one hashed bucket beyond the flags.
    pub fn new(dim: usize) -> Self {
        assert!(dim > Flag::COUNT, "feature dimension {dim} too small");
        assert!(dim <= u32::MAX as usize);
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hashed_index(&self, gram: &str) -> u32 {
        let buckets = (self.dim - Flag::COUNT) as u64;
        (Flag::COUNT as u64 + fnv1a(gram.as_bytes()) % buckets) as u32
    }

    fn grams(tokens: &[&str]) -> Vec<String> {
        let mut grams: Vec<String> = tokens.iter().map(|t| format!("u:{t}")).collect();
        for pair in tokens.windows(2) {
            grams.push(format!("b:{} {}", pair[0], pair[1]));
        }
        if let Some(first) = tokens.first() {
            grams.push(format!("s:{first}"));
        }
        grams
    }

    fn flags(tokens: &[&str]) -> Vec<Flag> {
        let mut flags = Vec::new();
        let has = |w: &str| tokens.contains(&w);
        if has("why") {
            flags.push(Flag::Why);
        }
        if has("how") {
            flags.push(Flag::How);
        }
        if has("what") {
            flags.push(Flag::What);
        }
        if tokens.iter().any(|t| OTHER_WH.contains(t)) {
            flags.push(Flag::OtherInterrogative);
        }
        if tokens.first().is_some_and(|t| IMPERATIVE_VERBS.contains(t)) {
            flags.push(Flag::Imperative);
        }
        if tokens.iter().any(|t| is_number_token(t)) {
            flags.push(Flag::Number);
        }
        if has("?") {
            flags.push(Flag::QuestionMark);
        }
        let words: Vec<&str> = tokens.iter().copied().filter(|t| *t != "?" && *t != ".").collect();
        if words.len() >= 2 {
            let last = words[words.len() - 1];
            let before = words[words.len() - 2];
            if TAG_WORDS.contains(&last) && before == "," {
                flags.push(Flag::TagQuestion);
            }
        }
        if tokens.first().is_some_and(|t| AUXILIARIES.contains(t)) {
            flags.push(Flag::AuxiliaryOpener);
        }
        if has("you") || has("your") {
            flags.push(Flag::SecondPerson);
        }
        flags
    }

    /// Deterministic features for normalized text: n-gram counts scaled to
    /// unit L2 norm, plus unit-valued keyword flags.
    pub fn featurize(&self, normalized: &str) -> FeatureVector {
        let tokens: Vec<&str> = tokens_with_spans(normalized).into_iter().map(|(_, t)| t).collect();
        if tokens.is_empty() {
            return FeatureVector::empty();
        }
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for gram in Self::grams(&tokens) {
            *counts.entry(self.hashed_index(&gram)).or_insert(0.0) += 1.0;
        }
        let norm = counts.values().map(|v| v * v).sum::<f64>().sqrt();
        for v in counts.values_mut() {
            *v /= norm;
        }
        for flag in Self::flags(&tokens) {
            counts.insert(flag.id(), 1.0);
        }
        let (indices, values) = counts.into_iter().unzip();
        FeatureVector { indices, values }
    }

    /// Fraction of distinct n-grams in `texts` that share a bucket with a
    /// different n-gram.
    pub fn collision_rate<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> CollisionStats {
        let mut by_bucket: HashMap<u32, std::collections::BTreeSet<String>> = HashMap::new();
        for text in texts {
            let tokens: Vec<&str> = tokens_with_spans(text).into_iter().map(|(_, t)| t).collect();
            for gram in Self::grams(&tokens) {
                by_bucket.entry(self.hashed_index(&gram)).or_default().insert(gram);
            }
        }
        let distinct: usize = by_bucket.values().map(|s| s.len()).sum();
        let colliding: usize = by_bucket.values().filter(|s| s.len() > 1).map(|s| s.len()).sum();
        CollisionStats {
            distinct_grams: distinct,
            colliding_grams: colliding,
            rate: if distinct == 0 { 0.0 } else { colliding as f64 / distinct as f64 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionStats {
    pub distinct_grams: usize,
    pub colliding_grams: usize,
    pub rate: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn why_flag_present() {
        let fv = Featurizer::default().featurize("why is it staying the same");
        assert!(fv.has_flag(Flag::Why));
        assert!(!fv.has_flag(Flag::Number));
    }

    #[test]
    fn empty_text_gives_empty_vector() {
        assert!(Featurizer::default().featurize("").is_empty());
    }

    #[test]
    fn number_flag_present() {
        let fv = Featurizer::default().featurize("what is 3 x 5");
        assert!(fv.has_flag(Flag::Number));
        assert!(fv.has_flag(Flag::What));
    }

    #[test]
    fn tag_question_and_imperative() {
        let f = Featurizer::default();
        assert!(f.featurize("the answer is three , right ?").has_flag(Flag::TagQuestion));
        assert!(f.featurize("sit down").has_flag(Flag::Imperative));
        assert!(!f.featurize("the right figure").has_flag(Flag::TagQuestion));
    }

    #[test]
    fn deterministic_sorted_and_bounded() {
        let f = Featurizer::new(64);
        let a = f.featurize("how did you get that answer ?");
        assert_eq!(a, f.featurize("how did you get that answer ?"));
        assert!(a.indices.windows(2).all(|w| w[0] < w[1]));
        assert!(a.indices.iter().all(|&i| (i as usize) < 64));
        assert!(a.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn number_tokens() {
        assert!(is_number_token("5"));
        assert!(is_number_token("2.5"));
        assert!(is_number_token("1/2"));
        assert!(!is_number_token("x"));
        assert!(!is_number_token("/"));
    }

    #[test]
    fn collision_rate_is_measurable() {
        let small = Featurizer::new(Flag::COUNT + 4);
        let stats = small.collision_rate(["a b c d e f g h"]);
        assert!(stats.rate > 0.0);
        let big = Featurizer::default().collision_rate(["a b"]);
        assert_eq!(big.rate, 0.0);
    }
}

//! Heuristic labeling functions and majority-vote aggregation.

use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::nlu::{normalize, DialogueAct};

/// A named pattern that votes for one act or abstains.
#[derive(Clone, Debug)]
pub struct LabelingFunction {
    pub name: String,
    pattern: Regex,
    pub label: DialogueAct,
}

impl LabelingFunction {
    pub fn new(name: &str, pattern: &str, label: DialogueAct) -> Result<Self, regex::Error> {
        Ok(Self { name: name.to_string(), pattern: Regex::new(pattern)?, label })
    }

    pub fn pattern(&self) -> &str {
        self.pattern.as_str()
    }

    /// Vote on normalized text; `None` is an abstention.
    pub fn apply(&self, normalized: &str) -> Option<DialogueAct> {
        self.pattern.is_match(normalized).then_some(self.label)
    }
}

const SHIPPED: &[(&str, &str, DialogueAct)] = &[
    ("how_did_you", r"^how (did|do|would|could|can) you\b", DialogueAct::Probing),
    ("how_come", r"^how come\b", DialogueAct::Probing),
    ("explain_describe", r"\b(explain|describe)\b", DialogueAct::Probing),
    ("tell_show_me_how", r"^(tell|show) me (how|why)\b", DialogueAct::Probing),
    ("why", r"\bwhy\b", DialogueAct::Probing),
    ("meaning", r"\b(represent|represents|mean|means|tell you about)\b", DialogueAct::Probing),
    ("relationship", r"\b(relationship|related|relate)\b", DialogueAct::Probing),
    ("what_would_happen", r"\bwhat (would|will) happen\b", DialogueAct::Probing),
    ("arithmetic", r"\d (x|times|plus|minus|divided by|\+|-|\*) \d", DialogueAct::Factual),
    ("either_or", r"^(does|is|are) .+ or .+ \?$", DialogueAct::Factual),
    ("operation_first", r"\b(subtract|add|multiply|divide)\b.* first\b", DialogueAct::Factual),
    ("what_is_the_dimension", r"^what is the (length|width|height|volume|scale factor)\b", DialogueAct::Factual),
    ("yes_no_number", r"^is the [a-z ]+ \d", DialogueAct::Factual),
    ("how_many_much", r"^how (many|much)\b", DialogueAct::Factual),
    ("which_bigger", r"^which is (bigger|smaller|larger|greater)\b", DialogueAct::Factual),
    ("comparison", r"\b(bigger|smaller|larger|greater|less) than \d", DialogueAct::Factual),
    ("what_number", r"^what number\b", DialogueAct::Factual),
    ("tag_question", r", (right|correct|ok|okay|yes) \?$", DialogueAct::Expository),
    ("look_at", r"\blook at\b", DialogueAct::Expository),
    ("attention_opener", r"^(notice|see|remember)\b", DialogueAct::Expository),
    ("between", r"^between\b", DialogueAct::Expository),
    ("declarative_value", r"^the [a-z ]+ is \d", DialogueAct::Expository),
    ("lets", r"^let's\b", DialogueAct::Expository),
    ("shows_tells_us", r"\b(shows|tells us)\b", DialogueAct::Expository),
    ("classroom_command", r"^(please )?(sit|stand|close|open|put|stop|line up|raise)\b", DialogueAct::Other),
    ("classroom_words", r"\b(books?|lunch|recess|bathroom|homework|backpacks?|nurse|office)\b", DialogueAct::Other),
    ("quiet", r"\b(quiet|settle down|listen up)\b", DialogueAct::Other),
    ("greeting", r"^good (morning|afternoon)\b", DialogueAct::Other),
];

/// Labeling functions reconstructed from the act category descriptions.
pub fn shipped_labeling_functions() -> Vec<LabelingFunction> {
    SHIPPED
        .iter()
        .map(|(name, pattern, label)| LabelingFunction::new(name, pattern, *label).expect("shipped pattern compiles"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub total: usize,
    pub labelled: usize,
    pub abstained: usize,
    pub conflicts: usize,
    pub coverage: f64,
    /// Utterances each function voted on.
    pub votes_per_function: BTreeMap<String, usize>,
}

/// Majority vote among non-abstaining functions. Utterances where every
/// function abstains, or where the top vote is tied, are dropped and counted.
pub fn label_corpus(
    utterances: &[String],
    lfs: &[LabelingFunction],
) -> Result<(Vec<(String, DialogueAct)>, LabelReport), CorpusError> {
    if lfs.is_empty() {
        return Err(CorpusError::NoLabelingFunctions);
    }
    let mut labelled = Vec::new();
    let mut abstained = 0;
    let mut conflicts = 0;
    let mut votes_per_function: BTreeMap<String, usize> =
        lfs.iter().map(|lf| (lf.name.clone(), 0)).collect();
    for raw in utterances {
        let text = normalize(raw);
        let mut votes = [0usize; 4];
        for lf in lfs {
            if let Some(act) = lf.apply(&text) {
                votes[act.index()] += 1;
                *votes_per_function.get_mut(&lf.name).expect("registered") += 1;
            }
        }
        let top = *votes.iter().max().expect("four classes");
        if top == 0 {
            abstained += 1;
            continue;
        }
        let winners: Vec<usize> = (0..4).filter(|&i| votes[i] == top).collect();
        if winners.len() > 1 {
            conflicts += 1;
            continue;
        }
        labelled.push((text, DialogueAct::ALL[winners[0]]));
    }
    let total = utterances.len();
    let report = LabelReport {
        total,
        labelled: labelled.len(),
        abstained,
        conflicts,
        coverage: if total == 0 { 0.0 } else { (total - abstained) as f64 / total as f64 },
        votes_per_function,
    };
    Ok((labelled, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label_one(text: &str) -> Option<DialogueAct> {
        let (out, _) = label_corpus(&[text.to_string()], &shipped_labeling_functions()).unwrap();
        out.first().map(|(_, a)| *a)
    }

    #[test]
    fn table_examples() {
        assert_eq!(label_one("How did you get that answer?"), Some(DialogueAct::Probing));
        assert_eq!(label_one("The answer is three, right?"), Some(DialogueAct::Expository));
        assert_eq!(label_one("Sit down"), Some(DialogueAct::Other));
    }

    #[test]
    fn unmatched_utterance_is_dropped() {
        let (out, report) = label_corpus(&["zzq qqz".to_string()], &shipped_labeling_functions()).unwrap();
        assert!(out.is_empty());
        assert_eq!(report.abstained, 1);
        assert_eq!(report.coverage, 0.0);
    }

    #[test]
    fn ties_are_conflicts() {
        let lfs = vec![
            LabelingFunction::new("a", "x", DialogueAct::Probing).unwrap(),
            LabelingFunction::new("b", "x", DialogueAct::Other).unwrap(),
        ];
        let (out, report) = label_corpus(&["x".to_string()], &lfs).unwrap();
        assert!(out.is_empty());
        assert_eq!(report.conflicts, 1);
        assert_eq!(report.coverage, 1.0);
    }

    #[test]
    fn needs_a_function() {
        assert!(matches!(label_corpus(&[], &[]), Err(CorpusError::NoLabelingFunctions)));
    }

    #[test]
    fn labelling_is_pure() {
        let texts: Vec<String> =
            ["why is it the same ?", "what is 2 x 3 ?", "look at this", "close your books", "hmm"]
                .iter()
                .map(|s| s.to_string())
                .collect();
        let lfs = shipped_labeling_functions();
        assert_eq!(label_corpus(&texts, &lfs).unwrap(), label_corpus(&texts, &lfs).unwrap());
    }
}

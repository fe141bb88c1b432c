//! Rule-based entity spotting (attributes, numbers, figure references) and a
//! learned (attribute, value) relation scorer.

mod relations;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nlu::{is_number_token, tokens_with_spans};
use crate::rational::Rational;

pub use relations::{
    pair_features, RelationCandidate, RelationRecord, RelationScorer, RelationTrainConfig,
    PAIR_FEATURE_NAMES,
};

#[derive(Debug, Error)]
pub enum EntityError {
    #[error("annotation does not match text: {0}")]
    AnnotationMismatch(String),
    #[error("degenerate relation corpus: {0}")]
    DegenerateCorpus(String),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("relation record {line}: {message}")]
    BadRecord { line: usize, message: String },
    #[error("relation scorer file: {0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Length,
    Width,
    Height,
    Volume,
    ScaleFactor,
}

impl Attribute {
    pub const ALL: [Attribute; 5] =
        [Attribute::Length, Attribute::Width, Attribute::Height, Attribute::Volume, Attribute::ScaleFactor];
    pub const DIMENSIONS: [Attribute; 3] = [Attribute::Length, Attribute::Width, Attribute::Height];

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Length => "length",
            Attribute::Width => "width",
            Attribute::Height => "height",
            Attribute::Volume => "volume",
            Attribute::ScaleFactor => "scale_factor",
        }
    }

    /// Surface name used in student replies.
    pub fn noun(self) -> &'static str {
        match self {
            Attribute::ScaleFactor => "scale factor",
            other => other.as_str(),
        }
    }

    pub fn is_dimension(self) -> bool {
        Self::DIMENSIONS.contains(&self)
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.noun())
    }
}

impl FromStr for Attribute {
    type Err = EntityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == key)
            .ok_or_else(|| EntityError::UnknownAttribute(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureRef {
    Left,
    Right,
    Unspecified,
}

impl FigureRef {
    pub fn as_str(self) -> &'static str {
        match self {
            FigureRef::Left => "left",
            FigureRef::Right => "right",
            FigureRef::Unspecified => "unspecified",
        }
    }
}

impl fmt::Display for FigureRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Byte range into the normalized utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeMention {
    pub attribute: Attribute,
    pub span: Span,
    pub surface: String,
    /// Half-open token range.
    pub tokens: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueMention {
    pub value: Rational,
    pub span: Span,
    pub surface: String,
    pub token: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureMention {
    pub figure: FigureRef,
    pub confidence: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Presence {
    V,
    NV,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValuePresence {
    pub presence: Presence,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub attributes: Vec<AttributeMention>,
    pub values: Vec<ValueMention>,
    pub figure: FigureMention,
    pub value_presence: ValuePresence,
}

impl EntityAnnotation {
    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty() && self.values.is_empty()
    }

    pub fn mentions(&self, attribute: Attribute) -> bool {
        self.attributes.iter().any(|m| m.attribute == attribute)
    }

    pub fn attribute_set(&self) -> Vec<Attribute> {
        let mut out: Vec<Attribute> = self.attributes.iter().map(|m| m.attribute).collect();
        out.sort();
        out.dedup();
        out
    }

    /// Recomputes value presence from scored candidates: `V` iff some valued
    /// candidate is labelled true.
    pub fn apply_relations(&mut self, candidates: &[RelationCandidate]) {
        let valued = candidates.iter().filter(|c| c.value.is_some());
        let best = valued.map(|c| c.confidence).fold(None, |acc: Option<f64>, c| {
            Some(acc.map_or(c, |a| a.max(c)))
        });
        self.value_presence = match best {
            Some(p) if p >= 0.5 => ValuePresence { presence: Presence::V, confidence: p },
            Some(p) => ValuePresence { presence: Presence::NV, confidence: 1.0 - p },
            None => ValuePresence { presence: Presence::NV, confidence: 1.0 },
        };
    }

    /// Checks every span against `text` and the recorded surface forms.
    pub fn check_against(&self, text: &str) -> Result<(), EntityError> {
        let check = |span: &Span, surface: &str| -> Result<(), EntityError> {
            match text.get(span.start..span.end) {
                Some(s) if s == surface => Ok(()),
                Some(s) => Err(EntityError::AnnotationMismatch(format!(
                    "span {}..{} reads {s:?}, expected {surface:?}",
                    span.start, span.end
                ))),
                None => Err(EntityError::AnnotationMismatch(format!(
                    "span {}..{} outside text of length {}",
                    span.start,
                    span.end,
                    text.len()
                ))),
            }
        };
        for m in &self.attributes {
            check(&m.span, &m.surface)?;
        }
        for v in &self.values {
            check(&v.span, &v.surface)?;
        }
        Ok(())
    }
}

const LEXICON: &[(&[&str], Attribute)] = &[
    (&["scale", "factor"], Attribute::ScaleFactor),
    (&["scale", "factors"], Attribute::ScaleFactor),
    (&["long", "side"], Attribute::Length),
    (&["length"], Attribute::Length),
    (&["lengths"], Attribute::Length),
    (&["len"], Attribute::Length),
    (&["long"], Attribute::Length),
    (&["width"], Attribute::Width),
    (&["widths"], Attribute::Width),
    (&["wide"], Attribute::Width),
    (&["breadth"], Attribute::Width),
    (&["height"], Attribute::Height),
    (&["heights"], Attribute::Height),
    (&["tall"], Attribute::Height),
    (&["high"], Attribute::Height),
    (&["volume"], Attribute::Volume),
    (&["volumes"], Attribute::Volume),
];

const FIGURE_NOUNS: &[&str] =
    &["figure", "prism", "box", "shape", "one", "object", "solid", "rectangle", "side", "picture"];
const FIGURE_DETERMINERS: &[&str] = &["the", "on", "this", "that", "to"];

/// Lexicon and keyword driven entity spotting over normalized text.
pub fn extract_entities(text: &str) -> EntityAnnotation {
    let toks = tokens_with_spans(text);
    let words: Vec<&str> = toks.iter().map(|(_, t)| *t).collect();

    let mut attributes = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let hit = LEXICON
            .iter()
            .filter(|(phrase, _)| words[i..].starts_with(phrase))
            .max_by_key(|(phrase, _)| phrase.len());
        match hit {
            Some((phrase, attribute)) => {
                let last = i + phrase.len() - 1;
                let start = toks[i].0;
                let end = toks[last].0 + toks[last].1.len();
                attributes.push(AttributeMention {
                    attribute: *attribute,
                    span: Span { start, end },
                    surface: text[start..end].to_string(),
                    tokens: (i, last + 1),
                });
                i += phrase.len();
            }
            None => i += 1,
        }
    }

    let values = toks
        .iter()
        .enumerate()
        .filter(|(_, (_, t))| is_number_token(t))
        .filter_map(|(i, (at, t))| {
            Rational::parse_token(t).map(|value| ValueMention {
                value,
                span: Span { start: *at, end: at + t.len() },
                surface: t.to_string(),
                token: i,
            })
        })
        .collect();

    EntityAnnotation {
        attributes,
        values,
        figure: figure_reference(&words),
        value_presence: ValuePresence { presence: Presence::NV, confidence: 1.0 },
    }
}

fn figure_reference(words: &[&str]) -> FigureMention {
    let mut cues: Vec<(FigureRef, f64)> = Vec::new();
    for (i, w) in words.iter().enumerate() {
        let next_is_noun = words.get(i + 1).is_some_and(|n| FIGURE_NOUNS.contains(n));
        let prev_is_det = i > 0 && FIGURE_DETERMINERS.contains(&words[i - 1]);
        let cue = match *w {
            "left" | "right" => {
                let figure = if *w == "left" { FigureRef::Left } else { FigureRef::Right };
                if next_is_noun {
                    Some((figure, 0.95))
                } else if prev_is_det {
                    Some((figure, 0.8))
                } else {
                    None
                }
            }
            "first" | "second" if next_is_noun => {
                Some((if *w == "first" { FigureRef::Left } else { FigureRef::Right }, 0.85))
            }
            "bigger" | "larger" if next_is_noun => Some((FigureRef::Right, 0.7)),
            "smaller" if next_is_noun => Some((FigureRef::Left, 0.7)),
            _ => None,
        };
        cues.extend(cue);
    }
    match cues.first() {
        None => FigureMention { figure: FigureRef::Unspecified, confidence: 0.0 },
        Some(&(figure, conf)) => {
            if cues.iter().any(|(f, _)| *f != figure) {
                FigureMention { figure, confidence: 0.5 }
            } else {
                let best = cues.iter().map(|(_, c)| *c).fold(conf, f64::max);
                FigureMention { figure, confidence: best }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_row_one_entities() {
        let text = "the length of the object is 5 , what is the width ?";
        let ann = extract_entities(text);
        assert_eq!(ann.attribute_set(), vec![Attribute::Length, Attribute::Width]);
        assert_eq!(ann.values.len(), 1);
        assert_eq!(ann.values[0].value, Rational::integer(5));
        ann.check_against(text).unwrap();
    }

    #[test]
    fn scale_factor_is_one_mention() {
        let ann = extract_entities("what is the scale factor ?");
        assert_eq!(ann.attributes.len(), 1);
        assert_eq!(ann.attributes[0].attribute, Attribute::ScaleFactor);
        assert_eq!(ann.attributes[0].surface, "scale factor");
        assert!(ann.values.is_empty());
    }

    #[test]
    fn no_hits_gives_empty_annotation() {
        let ann = extract_entities("sit down");
        assert!(ann.is_empty());
        assert_eq!(ann.figure.figure, FigureRef::Unspecified);
    }

    #[test]
    fn figure_cues() {
        assert_eq!(extract_entities("the width of the left figure is 3").figure.figure, FigureRef::Left);
        assert_eq!(extract_entities("look at the right one").figure.figure, FigureRef::Right);
        assert_eq!(extract_entities("the second prism").figure.figure, FigureRef::Right);
        // Tag questions and "first" as an adverb are not figure cues.
        assert_eq!(
            extract_entities("the answer is three , right ?").figure.figure,
            FigureRef::Unspecified
        );
        assert_eq!(
            extract_entities("what do you subtract first ?").figure.figure,
            FigureRef::Unspecified
        );
        let both = extract_entities("the left figure and the right figure");
        assert_eq!(both.figure.confidence, 0.5);
    }

    #[test]
    fn fractions_and_decimals() {
        let ann = extract_entities("does this picture show 1/2 or 1/4 ?");
        let vals: Vec<_> = ann.values.iter().map(|v| v.value.clone()).collect();
        assert_eq!(vals, vec![Rational::new(1, 2), Rational::new(1, 4)]);
        assert_eq!(extract_entities("it is 2.5 long").values[0].value, Rational::new(5, 2));
    }

    #[test]
    fn mismatched_annotation_is_detected() {
        let ann = extract_entities("the length is 5");
        assert!(ann.check_against("the length is 5").is_ok());
        assert!(matches!(ann.check_against("short"), Err(EntityError::AnnotationMismatch(_))));
        assert!(ann.check_against("the height is 5").is_err());
    }

    #[test]
    fn attribute_names_parse() {
        assert_eq!("scale factor".parse::<Attribute>().unwrap(), Attribute::ScaleFactor);
        assert_eq!("Length".parse::<Attribute>().unwrap(), Attribute::Length);
        assert!("area".parse::<Attribute>().is_err());
    }
}

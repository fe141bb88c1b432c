//! World model for the scale-factor task: two similar rectangular prisms.
//!
//! The scale factor runs left to right: `k = right / left`. States are
//! immutable values; every assertion returns a new state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entity::{Attribute, FigureRef};
use crate::rational::Rational;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("dimension values must be positive, got {0}")]
    NonPositiveValue(Rational),
    #[error("a figure (left or right) must be specified")]
    UnspecifiedFigure,
    #[error("{0} is derived, not asserted")]
    NotADimension(Attribute),
    #[error("{figure} {attribute} = {asserted} conflicts with {expected} ({reason})")]
    Conflict {
        figure: FigureRef,
        attribute: Attribute,
        asserted: Rational,
        expected: Rational,
        reason: String,
    },
    #[error("scenario seed: {0}")]
    Seed(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assertion {
    pub turn: u64,
    pub figure: FigureRef,
    pub attribute: Attribute,
    pub value: Rational,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Answer {
    Known(Rational),
    Unknown,
}

impl Answer {
    pub fn known(self) -> Option<Rational> {
        match self {
            Answer::Known(v) => Some(v),
            Answer::Unknown => None,
        }
    }
}

/// How the scale factor was obtained: `right / left` for one attribute.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Derivation {
    pub attribute: Attribute,
    pub right: Rational,
    pub left: Rational,
}

impl std::fmt::Display for Derivation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} / {}", self.right, self.left)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioState {
    pub left: BTreeMap<Attribute, Rational>,
    pub right: BTreeMap<Attribute, Rational>,
    pub log: Vec<Assertion>,
}

impl ScenarioState {
    pub fn new() -> Self {
        Self::default()
    }

    fn side(&self, figure: FigureRef) -> Option<&BTreeMap<Attribute, Rational>> {
        match figure {
            FigureRef::Left => Some(&self.left),
            FigureRef::Right => Some(&self.right),
            FigureRef::Unspecified => None,
        }
    }

    /// Attributes known on both figures with their `right / left` ratios.
    fn ratios(&self) -> impl Iterator<Item = (Attribute, Rational)> + '_ {
        Attribute::DIMENSIONS.into_iter().filter_map(|a| {
            let (l, r) = (self.left.get(&a)?, self.right.get(&a)?);
            Some((a, r / l))
        })
    }

    pub fn derivation(&self) -> Option<Derivation> {
        Attribute::DIMENSIONS.into_iter().find_map(|a| {
            Some(Derivation { attribute: a, right: self.right.get(&a)?.clone(), left: self.left.get(&a)?.clone() })
        })
    }

    pub fn scale_factor(&self) -> Option<Rational> {
        self.ratios().next().map(|(_, k)| k)
    }

    /// True iff every doubly-known attribute has the same ratio.
    pub fn consistent(&self) -> bool {
        let mut ratios = self.ratios().map(|(_, k)| k);
        match ratios.next() {
            None => true,
            Some(first) => ratios.all(|k| k == first),
        }
    }

    /// Records a known dimension. Returns the new state, or `Conflict` when the
    /// value contradicts a stored value or the similarity of the two figures.
    pub fn assert_fact(
        &self,
        turn: u64,
        figure: FigureRef,
        attribute: Attribute,
        value: Rational,
    ) -> Result<ScenarioState, ScenarioError> {
        if !value.is_positive() {
            return Err(ScenarioError::NonPositiveValue(value));
        }
        if figure == FigureRef::Unspecified {
            return Err(ScenarioError::UnspecifiedFigure);
        }
        if !attribute.is_dimension() {
            return Err(ScenarioError::NotADimension(attribute));
        }
        let conflict = |expected: Rational, reason: String| ScenarioError::Conflict {
            figure,
            attribute,
            asserted: value.clone(),
            expected,
            reason,
        };
        if let Some(existing) = self.side(figure).and_then(|s| s.get(&attribute)) {
            if *existing != value {
                return Err(conflict(existing.clone(), format!("{figure} {attribute} is already known")));
            }
        }
        if let Answer::Known(expected) = self.query(Some(figure), attribute) {
            if expected != value {
                let k = self.scale_factor().map_or_else(|| "?".into(), |k| k.to_string());
                return Err(conflict(expected, format!("similar figures with scale factor {k}")));
            }
        }
        let mut next = self.clone();
        match figure {
            FigureRef::Left => next.left.insert(attribute, value.clone()),
            FigureRef::Right => next.right.insert(attribute, value.clone()),
            FigureRef::Unspecified => unreachable!("rejected above"),
        };
        next.log.push(Assertion { turn, figure, attribute, value });
        debug_assert!(next.consistent());
        Ok(next)
    }

    fn dimension(&self, figure: FigureRef, attribute: Attribute) -> Option<Rational> {
        let (own, other) = match figure {
            FigureRef::Left => (&self.left, &self.right),
            FigureRef::Right => (&self.right, &self.left),
            FigureRef::Unspecified => return None,
        };
        if let Some(v) = own.get(&attribute) {
            return Some(v.clone());
        }
        let k = self.scale_factor()?;
        let v = other.get(&attribute)?;
        Some(match figure {
            FigureRef::Left => v / &k,
            _ => v * &k,
        })
    }

    fn stored_volume(&self, figure: FigureRef) -> Option<Rational> {
        let side = self.side(figure)?;
        let dims: Option<Vec<&Rational>> = Attribute::DIMENSIONS.iter().map(|a| side.get(a)).collect();
        dims.map(|d| &(d[0] * d[1]) * d[2])
    }

    /// Known or derivable value. Scale-factor queries ignore `figure`; any
    /// other attribute needs a concrete figure. Never guesses.
    pub fn query(&self, figure: Option<FigureRef>, attribute: Attribute) -> Answer {
        let answer = match attribute {
            Attribute::ScaleFactor => self.scale_factor(),
            Attribute::Volume => figure.and_then(|f| self.volume(f)),
            dim => figure.and_then(|f| self.dimension(f, dim)),
        };
        answer.map_or(Answer::Unknown, Answer::Known)
    }

    fn volume(&self, figure: FigureRef) -> Option<Rational> {
        if let Some(v) = self.stored_volume(figure) {
            return Some(v);
        }
        let k = self.scale_factor();
        match (figure, k) {
            (FigureRef::Right, Some(k)) => {
                if let Some(v) = self.stored_volume(FigureRef::Left) {
                    return Some(&v * &k.pow(3));
                }
            }
            (FigureRef::Left, Some(k)) => {
                if let Some(v) = self.stored_volume(FigureRef::Right) {
                    return Some(&v / &k.pow(3));
                }
            }
            _ => {}
        }
        let dims: Option<Vec<Rational>> =
            Attribute::DIMENSIONS.iter().map(|a| self.dimension(figure, *a)).collect();
        dims.map(|d| &(&d[0] * &d[1]) * &d[2])
    }
}

/// Initial known dimensions per figure, as stored in a scenario seed file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSeed {
    #[serde(default)]
    pub left: BTreeMap<Attribute, Rational>,
    #[serde(default)]
    pub right: BTreeMap<Attribute, Rational>,
}

impl Default for ScenarioSeed {
    /// Left prism 5 x 3 x 4; only the right length (10) is given.
    fn default() -> Self {
        let left = [(Attribute::Length, 5), (Attribute::Width, 3), (Attribute::Height, 4)]
            .into_iter()
            .map(|(a, v)| (a, Rational::integer(v)))
            .collect();
        let right = [(Attribute::Length, Rational::integer(10))].into_iter().collect();
        Self { left, right }
    }
}

impl ScenarioSeed {
    pub fn from_json(s: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(s).map_err(|e| ScenarioError::Seed(e.to_string()))
    }

    /// Builds the starting state; seeds that violate similarity are rejected.
    pub fn build(&self) -> Result<ScenarioState, ScenarioError> {
        let mut state = ScenarioState::new();
        for (figure, side) in [(FigureRef::Left, &self.left), (FigureRef::Right, &self.right)] {
            for (attribute, value) in side {
                state = state.assert_fact(0, figure, *attribute, value.clone())?;
            }
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Attribute::*;
    use FigureRef::{Left, Right};

    fn r(n: i64) -> Rational {
        Rational::integer(n)
    }

    #[test]
    fn first_fact_and_ratio() {
        let s = ScenarioState::new().assert_fact(1, Left, Length, r(5)).unwrap();
        assert_eq!(s.left.get(&Length), Some(&r(5)));
        assert_eq!(s.scale_factor(), None);
        let s = s.assert_fact(2, Right, Length, r(10)).unwrap();
        assert_eq!(s.scale_factor(), Some(r(2)));
        assert_eq!(s.query(None, ScaleFactor), Answer::Known(r(2)));
    }

    #[test]
    fn similarity_violation_conflicts() {
        let s = ScenarioState::new()
            .assert_fact(1, Left, Length, r(5))
            .and_then(|s| s.assert_fact(2, Right, Length, r(10)))
            .and_then(|s| s.assert_fact(3, Left, Width, r(3)))
            .unwrap();
        let before = s.clone();
        let err = s.assert_fact(4, Right, Width, r(7)).unwrap_err();
        assert!(matches!(err, ScenarioError::Conflict { expected, .. } if expected == r(6)));
        assert_eq!(s, before);
        assert!(s.assert_fact(4, Right, Width, r(6)).is_ok());
    }

    #[test]
    fn restating_a_stored_value_is_fine_changing_it_is_not() {
        let s = ScenarioState::new().assert_fact(1, Left, Height, r(4)).unwrap();
        assert!(s.assert_fact(2, Left, Height, r(4)).is_ok());
        assert!(matches!(s.assert_fact(2, Left, Height, r(9)), Err(ScenarioError::Conflict { .. })));
    }

    #[test]
    fn precondition_errors() {
        let s = ScenarioState::new();
        assert!(matches!(s.assert_fact(1, Left, Length, r(0)), Err(ScenarioError::NonPositiveValue(_))));
        assert!(matches!(s.assert_fact(1, Left, Length, r(-2)), Err(ScenarioError::NonPositiveValue(_))));
        assert!(matches!(
            s.assert_fact(1, FigureRef::Unspecified, Length, r(2)),
            Err(ScenarioError::UnspecifiedFigure)
        ));
        assert!(matches!(s.assert_fact(1, Left, Volume, r(2)), Err(ScenarioError::NotADimension(Volume))));
        assert!(matches!(s.assert_fact(1, Left, ScaleFactor, r(2)), Err(ScenarioError::NotADimension(_))));
    }

    #[test]
    fn volume_queries() {
        let seed = ScenarioSeed {
            left: [(Length, r(2)), (Width, r(3)), (Height, r(4))].into_iter().collect(),
            right: [(Length, r(4))].into_iter().collect(),
        };
        let s = seed.build().unwrap();
        assert_eq!(s.query(Some(Left), Volume), Answer::Known(r(24)));
        // Oracle: multiply the scaled dimensions directly.
        let direct = r(4 * 6 * 8);
        assert_eq!(s.query(Some(Right), Volume), Answer::Known(direct.clone()));
        assert_eq!(direct, &r(24) * &r(2).pow(3));
        assert_eq!(s.query(None, Volume), Answer::Unknown);
        assert_eq!(s.query(Some(FigureRef::Unspecified), Width), Answer::Unknown);
    }

    #[test]
    fn unknown_is_not_guessed() {
        let s = ScenarioState::new().assert_fact(1, Left, Length, r(5)).unwrap();
        assert_eq!(s.query(Some(Right), Length), Answer::Unknown);
        assert_eq!(s.query(Some(Left), Volume), Answer::Unknown);
        assert_eq!(s.query(None, ScaleFactor), Answer::Unknown);
    }

    #[test]
    fn consistency() {
        assert!(ScenarioState::new().consistent());
        let s = ScenarioSeed {
            left: [(Length, r(5)), (Width, r(4))].into_iter().collect(),
            right: [(Length, r(10)), (Width, r(8))].into_iter().collect(),
        }
        .build()
        .unwrap();
        assert!(s.consistent());
        let mut broken = s.clone();
        broken.right.insert(Width, r(9));
        assert!(!broken.consistent());
    }

    #[test]
    fn shipped_seed() {
        let s = ScenarioSeed::default().build().unwrap();
        assert_eq!(s.scale_factor(), Some(r(2)));
        assert_eq!(s.derivation().unwrap().to_string(), "10 / 5");
        assert_eq!(s.query(Some(Right), Volume), Answer::Known(r(480)));
        let json = serde_json::to_string(&ScenarioSeed::default()).unwrap();
        assert_eq!(json, r#"{"left":{"length":"5","width":"3","height":"4"},"right":{"length":"10"}}"#);
        assert_eq!(ScenarioSeed::from_json(&json).unwrap(), ScenarioSeed::default());
    }
}

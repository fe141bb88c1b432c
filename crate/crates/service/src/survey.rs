//! Post-session Likert survey.

use serde::{Deserialize, Serialize};

pub const QUESTION_COUNT: usize = 6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    /// `None` for slots whose wording is left to the deployment.
    pub text: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyDefinition {
    pub scale: (u8, u8),
    pub questions: Vec<Question>,
}

impl Default for SurveyDefinition {
    fn default() -> Self {
        let q = |id: &str, text: Option<&str>| Question { id: id.into(), text: text.map(Into::into) };
        Self {
            scale: (1, 5),
            questions: vec![
                q("Q1", Some("Did the task get accomplished?")),
                q("Q2", Some("Do you think the student learned anything?")),
                q("Q3", None),
                q("Q4", Some("How fluent was the conversation?")),
                q("Q5", Some("How sensible were the responses?")),
                q("Q6", None),
            ],
        }
    }
}

impl SurveyDefinition {
    pub fn from_json(s: &str) -> Result<Self, String> {
        let def: SurveyDefinition = serde_json::from_str(s).map_err(|e| e.to_string())?;
        if def.questions.len() != QUESTION_COUNT {
            return Err(format!("survey must have {QUESTION_COUNT} questions, found {}", def.questions.len()));
        }
        if def.scale != (1, 5) {
            return Err("survey scale must be 1..5".into());
        }
        Ok(def)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Teacher,
    Supervisor,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub session: String,
    pub answers: Vec<u8>,
    pub role: Role,
}

impl SurveyResponse {
    pub fn validate(&self) -> Result<(), String> {
        if self.answers.len() != QUESTION_COUNT {
            return Err(format!("expected {QUESTION_COUNT} answers, got {}", self.answers.len()));
        }
        if let Some(bad) = self.answers.iter().find(|a| !(1..=5).contains(*a)) {
            return Err(format!("answer {bad} is outside 1..5"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arity_and_range() {
        let mk = |answers: Vec<u8>| SurveyResponse { session: "s".into(), answers, role: Role::Teacher };
        assert!(mk(vec![5, 4, 3, 2, 1, 5]).validate().is_ok());
        assert!(mk(vec![5, 4, 3, 2, 1]).validate().is_err());
        assert!(mk(vec![5, 4, 3, 2, 1, 0]).validate().is_err());
        assert!(mk(vec![6, 4, 3, 2, 1, 1]).validate().is_err());
    }

    #[test]
    fn definition_round_trip() {
        let def = SurveyDefinition::default();
        let json = serde_json::to_string(&def).unwrap();
        assert_eq!(SurveyDefinition::from_json(&json).unwrap(), def);
        assert!(SurveyDefinition::from_json(r#"{"scale":[1,5],"questions":[]}"#).is_err());
    }
}

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewLabel {
    AcceptAsIs,
    MinorEdit,
    MajorEdit,
}

impl ReviewLabel {
    pub const ALL: [ReviewLabel; 3] = [ReviewLabel::AcceptAsIs, ReviewLabel::MinorEdit, ReviewLabel::MajorEdit];

    pub fn as_str(self) -> &'static str {
        match self {
            ReviewLabel::AcceptAsIs => "accept_as_is",
            ReviewLabel::MinorEdit => "minor_edit",
            ReviewLabel::MajorEdit => "major_edit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub final_text: String,
    pub label: ReviewLabel,
    pub steward_id: String,
    pub decided_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecisionError {
    #[error("final_text is empty")]
    EmptyText,
    #[error("accept_as_is requires final_text to equal the generated text")]
    AcceptChangedText,
    #[error("steward_id is empty")]
    NoSteward,
}

impl ReviewDecision {
    pub fn validate(&self, generated: &str) -> Result<(), DecisionError> {
        if self.final_text.trim().is_empty() {
            return Err(DecisionError::EmptyText);
        }
        if self.steward_id.trim().is_empty() {
            return Err(DecisionError::NoSteward);
        }
        if self.label == ReviewLabel::AcceptAsIs && self.final_text != generated {
            return Err(DecisionError::AcceptChangedText);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(text: &str, label: ReviewLabel) -> ReviewDecision {
        ReviewDecision {
            final_text: text.into(),
            label,
            steward_id: "s1".into(),
            decided_at: Utc::now(),
        }
    }

    #[test]
    fn validation() {
        assert!(d("a b", ReviewLabel::AcceptAsIs).validate("a b").is_ok());
        assert_eq!(d("a c", ReviewLabel::AcceptAsIs).validate("a b"), Err(DecisionError::AcceptChangedText));
        assert!(d("a c", ReviewLabel::MinorEdit).validate("a b").is_ok());
        assert_eq!(d(" ", ReviewLabel::MajorEdit).validate("a b"), Err(DecisionError::EmptyText));
        assert_eq!(serde_json::to_string(&ReviewLabel::AcceptAsIs).unwrap(), "\"accept_as_is\"");
    }
}

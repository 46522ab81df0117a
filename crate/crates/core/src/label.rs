//! Binary class labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Pixel class. Numeric codes follow the `1 = plastic, 2 = water` convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Plastic,
    Water,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Plastic, Label::Water];

    pub fn code(self) -> u8 {
        match self {
            Label::Plastic => 1,
            Label::Water => 2,
        }
    }

    /// Index into two-element count arrays (`[plastic, water]`).
    #[inline]
    pub fn index(self) -> usize {
        match self {
            Label::Plastic => 0,
            Label::Water => 1,
        }
    }

    pub fn from_index(i: usize) -> Label {
        if i == 0 {
            Label::Plastic
        } else {
            Label::Water
        }
    }

    /// SVM sign convention: plastic is +1, water is -1.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Plastic => 1.0,
            Label::Water => -1.0,
        }
    }

    pub fn other(self) -> Label {
        match self {
            Label::Plastic => Label::Water,
            Label::Water => Label::Plastic,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Plastic => "plastic",
            Label::Water => "water",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unrecognised label {0:?} (expected plastic or water)")]
pub struct ParseLabelError(pub String);

impl FromStr for Label {
    type Err = ParseLabelError;

    /// Case-insensitive; also accepts the numeric codes `1` and `2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "plastic" | "1" => Ok(Label::Plastic),
            "water" | "2" => Ok(Label::Water),
            _ => Err(ParseLabelError(s.to_string())),
        }
    }
}

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a data modality in the global modality list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModalityId(pub usize);

impl fmt::Display for ModalityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ClassLabel(u8);

impl ClassLabel {
    pub const NEGATIVE: ClassLabel = ClassLabel(0);
    pub const POSITIVE: ClassLabel = ClassLabel(1);
    pub const ALL: [ClassLabel; 2] = [ClassLabel::NEGATIVE, ClassLabel::POSITIVE];

    pub fn new(value: u8) -> Result<Self> {
        match value {
            0 | 1 => Ok(ClassLabel(value)),
            other => Err(Error::Data(format!("label {other} is not binary"))),
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_positive(self) -> bool {
        self.0 == 1
    }
}

impl TryFrom<u8> for ClassLabel {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        ClassLabel::new(value)
    }
}

impl From<ClassLabel> for u8 {
    fn from(label: ClassLabel) -> u8 {
        label.0
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

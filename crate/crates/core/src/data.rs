//! Labeled query/item pairs, the unit of training and evaluation.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// One human-labeled relevance judgment: 1 = relevant ("Good"), 0 = not.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LabeledPair {
    pub query_id: String,
    pub query: String,
    pub item_id: String,
    pub item: String,
    pub label: u8,
}

impl LabeledPair {
    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(CoreError::Contract(alloc::format!(
                "label must be 0 or 1, got {}",
                self.label
            )));
        }
        Ok(())
    }
}

/// An ordered collection of labeled pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub pairs: Vec<LabeledPair>,
}

impl Dataset {
    pub fn new(pairs: Vec<LabeledPair>) -> Self {
        Dataset { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, LabeledPair> {
        self.pairs.iter()
    }

    /// Both classes present?
    pub fn has_both_classes(&self) -> bool {
        self.pairs.iter().any(|p| p.label == 1) && self.pairs.iter().any(|p| p.label == 0)
    }
}

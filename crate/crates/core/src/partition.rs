//! Separating right knowledge from biased knowledge.
//!
//! A teacher prediction is "right" when its argmax (lowest index on ties)
//! equals the label. Subsets are gathered by index rather than by
//! multiplying with a 0/1 mask, which would introduce `0 · ln(0/0)` terms.

use crate::error::{Error, Result};
use crate::numerics::{OneHotLabel, ProbVector};

/// Per-sample teacher correctness; `true` marks right knowledge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTable {
    flags: Vec<bool>,
}

impl MaskTable {
    pub fn from_flags(flags: Vec<bool>) -> Self {
        Self { flags }
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn right_count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    /// Fraction of right flags, i.e. the teacher's top-1 accuracy on the batch.
    pub fn right_fraction(&self) -> f64 {
        if self.flags.is_empty() {
            return 0.0;
        }
        self.right_count() as f64 / self.flags.len() as f64
    }
}

/// Batch indices split into right-knowledge and bias subsets, each in
/// original order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchSplit {
    pub right_indices: Vec<usize>,
    pub bias_indices: Vec<usize>,
}

pub fn build_mask(teacher_probs: &[ProbVector], labels: &[OneHotLabel]) -> Result<MaskTable> {
    if teacher_probs.len() != labels.len() {
        return Err(Error::InvalidBatch(format!(
            "{} teacher predictions for {} labels",
            teacher_probs.len(),
            labels.len()
        )));
    }
    let flags = teacher_probs
        .iter()
        .zip(labels)
        .map(|(p, y)| p.argmax() == y.class_index())
        .collect();
    Ok(MaskTable { flags })
}

pub fn split_batch(mask: &MaskTable) -> BatchSplit {
    let mut split = BatchSplit::default();
    for (i, &right) in mask.flags.iter().enumerate() {
        if right {
            split.right_indices.push(i);
        } else {
            split.bias_indices.push(i);
        }
    }
    split
}

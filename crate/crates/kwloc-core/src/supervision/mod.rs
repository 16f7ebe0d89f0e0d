//! Supervision targets, loss functions, and the training loop.

pub mod adam;
pub mod train;
pub mod visual;

use crate::error::{CoreError, Result};
use crate::numerics;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use train::{train, EarlyStop, EpochLog, KeywordSampling, TrainConfig, TrainReport};

/// Which per-utterance target vector supervises training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupervisionKind {
    /// Hard bag-of-words presence labels in {0, 1}.
    Bow,
    /// Soft visual-tagger scores in [0, 1].
    Visual,
}

impl SupervisionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SupervisionKind::Bow => "bow",
            SupervisionKind::Visual => "visual",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bow" => Ok(SupervisionKind::Bow),
            "visual" => Ok(SupervisionKind::Visual),
            other => Err(CoreError::invalid(format!(
                "unknown supervision '{other}' (expected bow | visual)"
            ))),
        }
    }
}

/// Binary cross-entropy of one probability against a (possibly soft) target.
/// The probability is clamped to [1e-7, 1−1e-7] before the logs.
pub fn bce_single<S: Scalar>(prob: S, target: S) -> Result<S> {
    if !(S::zero()..=S::one()).contains(&target) {
        return Err(CoreError::invalid(format!(
            "bce target {target} outside [0, 1]"
        )));
    }
    Ok(numerics::bce_term(prob, target))
}

/// Sum of per-keyword binary cross-entropies.
pub fn bce_multilabel<S: Scalar>(probs: &[S], targets: &[S]) -> Result<S> {
    if probs.len() != targets.len() {
        return Err(CoreError::shape(format!(
            "bce_multilabel: {} probabilities vs {} targets",
            probs.len(),
            targets.len()
        )));
    }
    let mut acc = S::zero();
    for (&p, &y) in probs.iter().zip(targets.iter()) {
        acc += bce_single(p, y)?;
    }
    Ok(acc)
}

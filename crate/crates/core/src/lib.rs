//! Few-shot prompting toolkit for next-token language-model backends:
//! prompt construction, bias diagnostics, and content-free calibration
//! of output probabilities.
//!
//! The pipeline: [`prompt`] renders few-shot prompts from a format corpus,
//! [`backend`] queries next-token probabilities (HTTP completions API,
//! recorded fixtures, or a deterministic biased mock), [`calibration`]
//! fits an affine correction from content-free probes so that a
//! signal-free input scores uniformly across answers, [`diagnostics`]
//! quantifies majority-label / recency / common-token biases from
//! prediction logs, and [`harness`] orchestrates seeded, resumable
//! sweeps over training sets, permutations, formats, and shot counts.

pub mod backend;
pub mod calibration;
pub mod diagnostics;
pub mod harness;
pub mod prompt;
pub mod seeding;

use serde::{Deserialize, Serialize};

/// Index of a class in a fixed, ordered label space.
///
/// The label-space order is set once per run (by the dataset manifest or
/// the format corpus) and every probability vector, calibration parameter
/// vector, and prediction refers back to it by this index.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct ClassId(pub usize);

impl std::fmt::Display for ClassId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for ClassId {
    fn from(v: usize) -> Self {
        ClassId(v)
    }
}

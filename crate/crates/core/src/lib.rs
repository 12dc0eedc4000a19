//! Strategic hiring games under stochastic LLM resume manipulation.
//!
//! Candidates carry fundamental features (kept by any manipulation) and style
//! features (overwritten by a manipulation model). A hirer scores submitted
//! resumes with a monotone scorer and accepts when the score clears a
//! threshold learned under a zero-false-positive objective. The crate plays
//! the Traditional, Two-Ticket and n-Ticket games by Monte Carlo, computes
//! the matching closed-form acceptance probabilities, and reports TPR,
//! FPR, accuracy and group disparities with split-based confidence intervals.
//!
//! Module map:
//! - [`model`]: feature vectors, candidates, population sampling
//! - [`law`]: the univariate distribution catalog shared by populations and models
//! - [`manipulation`]: manipulation models and stochastic dominance
//! - [`scoring`]: monotone scorers, threshold classifiers, score laws
//! - [`schemes`]: best response, game play and acceptance probabilities
//! - [`threshold`]: zero-false-positive threshold learning
//! - [`metrics`]: rates, disparities, split confidence intervals, decay fits
//! - [`harness`]: config-driven experiments, score-table replay, reports

pub mod error;
pub mod harness;
pub mod law;
pub mod manipulation;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod schemes;
pub mod scoring;
pub mod threshold;

pub use error::{Error, Result};
pub use law::Law;
pub use manipulation::{DominanceVerdict, Manipulated, ManipulationModel, Relation};
pub use model::{Candidate, FeatureVector, Group, Label, PopulationSpec};
pub use rng::SeedStream;
pub use schemes::{SchemeKind, SchemeSpec};
pub use scoring::{Scorer, ThresholdClassifier};

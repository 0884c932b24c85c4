//! Turns per-frame facial action-unit (AU) intensity traces into automatic
//! user-preference annotations for generated images.
//!
//! The pipeline runs load -> frame filtering -> AU activation extraction ->
//! participant reliability screening -> valence scoring -> leave-one-participant-out
//! fitting and evaluation -> statistical reporting. A standalone loss kit
//! implements the ordinal-regression training objective used by upstream AU
//! models, with analytic gradients.

pub mod au_activation;
pub mod data_model;
pub mod error;
pub mod fitting;
pub mod frame_filter;
pub mod loss_kit;
pub mod pipeline;
pub mod preference;
pub mod scoring;
pub mod stats;
pub mod synth;

pub use data_model::{AnnotationRecord, AuId, AuTrace, ClipKind, Cohort, FrameRecord, ScoreTable};
pub use error::{Error, Result};
pub use frame_filter::{FilterThresholds, FilteredClip};

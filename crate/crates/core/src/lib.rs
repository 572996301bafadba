//! Two-stage evidential fusion for multimodal binary classification.
//!
//! Stage one trains branch classifiers (two modalities plus a fusion head).
//! Stage two trains a small evidence network per branch that scores how far
//! that branch's prediction can be trusted. Predictions are combined by
//! Dempster's rule over the frame `{positive, negative}` with the evidence
//! score as the committed mass.

pub mod backbones;
pub mod config;
pub mod data;
pub mod dst;
pub mod error;
pub mod evidence;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod persist;

pub use error::{Error, Result};

//! Metric engine for text-to-image synthesis evaluation.
//!
//! The engine consumes prediction artifacts produced by external model
//! inference (class probabilities, logits, features, detections, similarity
//! scores, object counts) and computes:
//!
//! - image realism: Inception Score, temperature-calibrated IS*, FID
//! - object fidelity: O-IS and O-FID on detector crops
//! - text relevance: R-precision
//! - object accuracy: SOA-C and SOA-I
//! - positional alignment (PA) and counting alignment (CA)
//!
//! plus expected calibration error, per-metric ranks, aspect scores and the
//! aggregate ranking score.

pub mod alignment;
pub mod artifact_io;
pub mod calibration;
pub mod caption_prep;
pub mod error;
pub mod fidelity;
mod numeric;
pub mod ranking;
pub mod report;
pub mod run;

pub use error::{EvalError, Result};

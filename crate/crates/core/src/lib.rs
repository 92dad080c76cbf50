//! Attribution explanations for a slot-based scene-text recognizer.
//!
//! The crate bundles everything needed to explain and evaluate the
//! predictions of a small sequence recognizer:
//!
//! * [`image`]: rasters, segmentations, attribution maps and heatmap rendering.
//! * [`synth`]: a deterministic synthetic text-image generator and dataset I/O.
//! * [`recognizer`]: the trainable slot network, its gradients and model files.
//! * [`attrib`]: eleven attribution methods behind one `explain` entry point.
//! * [`selectivity`]: deletion curves, their AUCs and best-method queries.
//! * [`strexp`]: combined per-character (local) and whole-sequence (global) explanations.
//! * [`benchmark`] and [`config`]: the run-config driven benchmark used by the CLI.

pub mod attrib;
pub mod benchmark;
pub mod config;
mod error;
pub mod image;
pub mod par;
pub mod pnm;
pub mod recognizer;
pub mod rng;
pub mod selectivity;
pub mod strexp;
pub mod synth;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use image::{AttributionMap, Image, SegmentMap, SegmentScores};
pub use recognizer::{ModelOutput, Recognizer, ScoreSpec, SlotNet};

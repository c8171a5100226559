//! Desk-scale stereo matching with slanted tile hypotheses, trainable end to
//! end on CPU.
//!
//! The pipeline: a small U-Net extracts a feature pyramid from each image;
//! per-tile matching over embedded 4x4 tiles initializes fronto-parallel
//! disparity hypotheses at every scale; a coarse-to-fine propagation stage
//! warps features along each tile's local plane, lets a small conv net emit
//! hypothesis updates plus confidences, fuses candidates, and finishes with
//! three refinement passes down to per-pixel tiles. Everything runs on a
//! reverse-mode tape ([`tensor`]), so the losses in [`loss`] train the whole
//! stack jointly. [`data`] generates synthetic planar scenes and reads and
//! writes the on-disk formats; [`metrics`] scores disparity maps.

pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod reference;
pub mod tensor;

pub use error::{Error, Result};

//! Interactive instance segmentation of unknown objects from motion.
//!
//! Body frame-invariant features (spatial twists of frames attached to moving
//! pixels) are clustered with Markov clustering, grown into instance masks,
//! and propagated through observed optical flow between pushes.

pub mod action;
pub mod clustering;
pub mod error;
pub mod flow;
pub mod frames;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod runner;
pub mod segmenter;
pub mod simulator;

pub use error::{Error, Result};

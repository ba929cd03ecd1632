//! Iterative homography estimation.
//!
//! * [`geometry`]: homographies, four-corner parameterization, warping, ACE.
//! * [`tensor`]: dense arrays with a reverse-mode autodiff tape.
//! * [`nn`]: convolution, normalization and residual layer blocks.
//! * [`features`]: Siamese convolutional feature pyramid.
//! * [`correlation`]: all-pairs correlation volume and windowed lookup.
//! * [`iclk`]: inverse-compositional Lucas-Kanade baseline.
//! * [`ihe`]: the trainable iterative estimator, its loss and training loop.
//! * [`datagen`]: synthetic warped-pair benchmarks and archives.
//! * [`report`]: benchmark reports.

pub mod correlation;
pub mod datagen;
pub mod error;
pub mod features;
pub mod geometry;
pub mod iclk;
pub mod ihe;
pub mod nn;
pub mod report;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use geometry::{CoordGrid, CornerDisplacement, Frame, Homography};
pub use tensor::{Tape, Tensor, Var};

//! Pose grouping and multi-person articulated tracking.
//!
//! The crate covers everything downstream of a keypoint network: heatmap
//! targets and peak extraction, keypoint/spatial/temporal embedding losses,
//! the pose-guided mean-shift grouping module, greedy pose decoding,
//! frame-to-frame association, evaluation, and a synthetic scene simulator
//! that produces the dense fields a trained network would predict.
//!
//! All losses are written against a small reverse-mode tape ([`autodiff`]) so
//! gradients can flow through grouping iterations into a predictor.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod decoder;
mod error;
pub mod frame;
pub mod grid;
pub mod heatmap;
mod math;
pub mod metrics;
pub mod pgg;
pub mod pipeline;
pub mod simulator;
pub mod spatial;
pub mod temporal;
pub mod tracker;
pub mod train;

pub use error::{Error, Result};
pub use frame::{FrameBundle, HumanEmbedding};
pub use grid::{GridShape, Keypoint, Pose, ScalarField, Skeleton, VectorField2};
pub use heatmap::{BinaryMask, HeatmapStack};

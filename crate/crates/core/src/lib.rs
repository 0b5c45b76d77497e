//! Iterative 6D pose refinement toolkit: pose algebra with the untangled
//! delta parameterization, object models, a silhouette rasterizer,
//! aspect-preserving zoom, pose metrics, the refinement loop and synthetic
//! data generation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod image;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod parallel;
pub mod pose;
pub mod refine;
pub mod render;
pub mod zoom;

pub use nalgebra;

pub use image::{DepthImage, Image, MaskBounds, MaskImage};
pub use model::{ObjectModel, SymmetrySpec};
pub use parallel::Exec;
pub use pose::{CameraIntrinsics, Pose, Representation, Rotation, UntangledDelta};

//! Second-stage refinement pipeline for 3D object detection proposals.
//!
//! Given a LiDAR point cloud and a set of coarse 3D proposal boxes, this crate
//! groups scene points into each (enlarged) proposal with a patch index,
//! downsamples each group with dynamic farthest voxel sampling, refines the
//! samples through an iterated local graph with attentive multi-level fusion,
//! and produces a confidence score plus a 7-DoF box residual per proposal,
//! together with the IoU-guided training objectives.
//!
//! The crate is `no_std` (with `alloc`) and fully deterministic: float math is
//! routed through `libm`, all reductions have a fixed order, and every random
//! draw comes from a seeded [`rng::Xoshiro256`].
#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod config;
pub mod fusion;
pub mod geom;
pub mod gradcheck;
pub mod graph;
pub mod grouping;
pub mod head;
mod math;
pub mod nn;
pub mod objectives;
pub mod pipeline;
pub mod rng;
pub mod sampling;

pub use config::PipelineConfig;
pub use geom::{Box3D, Point4, PointCloud};
pub use grouping::ProposalGroup;
pub use pipeline::{RefineParams, Refined};

//! IO companion for the refinement pipeline: KITTI-format ingestion, weight
//! and feature-map files, synthetic scene generation, config files, the
//! benchmark harness and the command-line interface.

pub mod bench;
pub mod cli;
pub mod config_file;
pub mod formats;
pub mod kitti;
pub mod records;
pub mod scene;
pub mod synth;

pub use scene::Scene;

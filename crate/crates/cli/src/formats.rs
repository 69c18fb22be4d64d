//! File wrappers around the binary containers defined in the core crate:
//! single-MLP weight files, whole-pipeline parameter bundles, and feature
//! maps.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use roigraph_core::config::PipelineConfig;
use roigraph_core::fusion::{decode_feature_map, encode_feature_map, FeatureMap};
use roigraph_core::nn::{decode_weights, encode_weights, MlpParams};
use roigraph_core::pipeline::RefineParams;

pub fn save_weights(path: &Path, params: &MlpParams) -> Result<()> {
    fs::write(path, encode_weights(params))
        .with_context(|| format!("writing weights to {}", path.display()))
}

pub fn load_weights(path: &Path) -> Result<MlpParams> {
    let bytes =
        fs::read(path).with_context(|| format!("reading weights from {}", path.display()))?;
    decode_weights(&bytes).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

/// A parameter bundle is the concatenation of the pipeline's weight
/// containers in their fixed order; see `RefineParams::encode`.
pub fn save_bundle(path: &Path, params: &RefineParams) -> Result<()> {
    fs::write(path, params.encode())
        .with_context(|| format!("writing parameter bundle to {}", path.display()))
}

pub fn load_bundle(path: &Path, cfg: &PipelineConfig) -> Result<RefineParams> {
    let bytes =
        fs::read(path).with_context(|| format!("reading parameter bundle from {}", path.display()))?;
    RefineParams::decode(cfg, &bytes).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

pub fn save_feature_map(path: &Path, map: &FeatureMap) -> Result<()> {
    fs::write(path, encode_feature_map(map))
        .with_context(|| format!("writing feature map to {}", path.display()))
}

pub fn load_feature_map(path: &Path) -> Result<FeatureMap> {
    let bytes =
        fs::read(path).with_context(|| format!("reading feature map from {}", path.display()))?;
    decode_feature_map(&bytes).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

//! Pipeline configuration. Defaults are the published operating point of the
//! method; every knob can be overridden from a config file or CLI flag.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::grouping::GroupingMode;
use crate::head::AggregationMethod;
use crate::sampling::SamplingStrategy;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Additive proposal enlargement in meters (split half per side).
    pub sigma: f64,
    /// BEV patch edge length in meters.
    pub patch_size: f64,
    /// Maximum boxes per patch before overflow handling kicks in.
    pub k_max: usize,
    /// Points sampled per proposal.
    pub t_s: usize,
    /// Dynamic voxel size scale (meters).
    pub lambda: f64,
    /// Dynamic voxel size decay length (meters).
    pub delta: f64,
    /// Voxel hash slot count.
    pub hash_capacity: usize,
    /// Neighborhood radius for per-node point encoding (meters).
    pub radius: f64,
    /// Channels of the per-node point encoder.
    pub pointnet_channels: Vec<usize>,
    /// Nearest neighbors per graph node.
    pub k: usize,
    /// Output dimensions of the graph iterations; the iteration count is the
    /// length of this list.
    pub iter_dims: Vec<usize>,
    /// Fused per-node embedding width.
    pub embed_dim: usize,
    /// Dropout ratio between the fused feature and the heads (training only).
    pub dropout: f64,
    /// Regression loss weight in the total loss.
    pub alpha: f64,
    /// Minimum 3D IoU for a proposal to count as a regression positive.
    pub positive_iou: f64,
    /// Voxel size of the fixed-size voxel sampling baseline.
    pub fixed_voxel_size: f64,
    pub strategy: SamplingStrategy,
    pub aggregation: AggregationMethod,
    /// Append image features to the initial node states.
    pub fusion: bool,
    pub grouping_mode: GroupingMode,
    /// Master seed; per-use streams (weights, per-box sampling, dropout) are
    /// derived from it.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sigma: 0.4,
            patch_size: 1.0,
            k_max: 32,
            t_s: 256,
            lambda: 0.18,
            delta: 50.0,
            hash_capacity: 4099,
            radius: 0.4,
            pointnet_channels: alloc::vec![16, 16],
            k: 8,
            iter_dims: alloc::vec![32, 32, 64],
            embed_dim: 256,
            dropout: 0.1,
            alpha: 1.0,
            positive_iou: 0.55,
            fixed_voxel_size: 0.18,
            strategy: SamplingStrategy::Dfvs,
            aggregation: AggregationMethod::Max,
            fusion: false,
            grouping_mode: GroupingMode::Strict,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConfigError {
    UnknownKey(String),
    BadValue { key: &'static str, value: String },
    Invalid(&'static str),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::UnknownKey(k) => write!(f, "unknown config key `{k}`"),
            ConfigError::BadValue { key, value } => {
                write!(f, "bad value `{value}` for config key `{key}`")
            }
            ConfigError::Invalid(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl core::error::Error for ConfigError {}

fn parse<T: FromStr>(key: &'static str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::BadValue {
        key,
        value: String::from(value),
    })
}

fn parse_list(key: &'static str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .map(|s| parse::<usize>(key, s))
        .collect()
}

impl PipelineConfig {
    /// Number of graph iterations.
    pub fn t(&self) -> usize {
        self.iter_dims.len()
    }

    /// Width of the concatenated multi-level feature.
    pub fn fused_in_dim(&self) -> usize {
        self.iter_dims.iter().sum()
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "sigma" => self.sigma = parse("sigma", value)?,
            "patch_size" => self.patch_size = parse("patch_size", value)?,
            "k_max" => self.k_max = parse("k_max", value)?,
            "t_s" => self.t_s = parse("t_s", value)?,
            "lambda" => self.lambda = parse("lambda", value)?,
            "delta" => self.delta = parse("delta", value)?,
            "hash_capacity" => self.hash_capacity = parse("hash_capacity", value)?,
            "radius" => self.radius = parse("radius", value)?,
            "pointnet_channels" => self.pointnet_channels = parse_list("pointnet_channels", value)?,
            "k" => self.k = parse("k", value)?,
            "iter_dims" => self.iter_dims = parse_list("iter_dims", value)?,
            "embed_dim" => self.embed_dim = parse("embed_dim", value)?,
            "dropout" => self.dropout = parse("dropout", value)?,
            "alpha" => self.alpha = parse("alpha", value)?,
            "positive_iou" => self.positive_iou = parse("positive_iou", value)?,
            "fixed_voxel_size" => self.fixed_voxel_size = parse("fixed_voxel_size", value)?,
            "strategy" => {
                self.strategy = value.trim().parse().map_err(|_| ConfigError::BadValue {
                    key: "strategy",
                    value: String::from(value),
                })?
            }
            "aggregation" => {
                self.aggregation = value.trim().parse().map_err(|_| ConfigError::BadValue {
                    key: "aggregation",
                    value: String::from(value),
                })?
            }
            "fusion" => {
                self.fusion = match value.trim() {
                    "true" | "on" | "1" => true,
                    "false" | "off" | "0" => false,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: "fusion",
                            value: String::from(value),
                        })
                    }
                }
            }
            "grouping_mode" => {
                self.grouping_mode = match value.trim() {
                    "strict" => GroupingMode::Strict,
                    "permissive" => GroupingMode::Permissive,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: "grouping_mode",
                            value: String::from(value),
                        })
                    }
                }
            }
            "seed" => self.seed = parse("seed", value)?,
            other => return Err(ConfigError::UnknownKey(String::from(other))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sigma < 0.0 {
            return Err(ConfigError::Invalid("sigma must be nonnegative"));
        }
        if self.patch_size <= 0.0 {
            return Err(ConfigError::Invalid("patch_size must be positive"));
        }
        if self.k_max == 0 {
            return Err(ConfigError::Invalid("k_max must be at least 1"));
        }
        if self.t_s == 0 {
            return Err(ConfigError::Invalid("t_s must be at least 1"));
        }
        if self.lambda <= 0.0 || self.delta <= 0.0 {
            return Err(ConfigError::Invalid("lambda and delta must be positive"));
        }
        if self.hash_capacity < 2 {
            return Err(ConfigError::Invalid("hash_capacity must be at least 2"));
        }
        if self.radius <= 0.0 {
            return Err(ConfigError::Invalid("radius must be positive"));
        }
        if self.pointnet_channels.is_empty() {
            return Err(ConfigError::Invalid("pointnet_channels must be non-empty"));
        }
        if self.iter_dims.is_empty() {
            return Err(ConfigError::Invalid(
                "iter_dims must name at least one iteration",
            ));
        }
        if self.k == 0 {
            return Err(ConfigError::Invalid("k must be at least 1"));
        }
        if self.embed_dim == 0 {
            return Err(ConfigError::Invalid("embed_dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::Invalid("dropout must be in [0, 1)"));
        }
        if self.fixed_voxel_size <= 0.0 {
            return Err(ConfigError::Invalid("fixed_voxel_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.positive_iou) {
            return Err(ConfigError::Invalid("positive_iou must be in [0, 1]"));
        }
        Ok(())
    }
}

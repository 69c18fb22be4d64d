//! Visual feature augmentation: channel-reduce a 2D feature map, project
//! graph nodes into the image, bilinearly sample, and append the sampled
//! vectors to the initial node states.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::geom::Point4;
use crate::math;
use crate::nn::{mlp_forward, MlpParams, NnError, Tensor2};

/// A dense 2D feature map. `stride` relates feature coordinates to image
/// pixels: feature `(u, v)` covers image pixel `(u * stride, v * stride)`.
/// Values are stored as f32, matching the on-disk format bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub stride: f64,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, stride: f64, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width * channels, "feature map size mismatch");
        assert!(stride > 0.0, "stride must be positive");
        Self { height, width, channels, stride, data }
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let base = (y * self.width + x) * self.channels;
        &self.data[base..base + self.channels]
    }
}

/// Camera model: a composed 3x4 projection from the sensor frame to pixel
/// coordinates, plus the valid image extent in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub proj: [[f64; 4]; 3],
    pub image_width: usize,
    pub image_height: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FusionError {
    Nn(NnError),
    ChannelMismatch { expected: usize, got: usize },
    Codec(String),
}

impl fmt::Display for FusionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionError::Nn(e) => write!(f, "{e}"),
            FusionError::ChannelMismatch { expected, got } => {
                write!(f, "feature map has {got} channels, reduction expects {expected}")
            }
            FusionError::Codec(msg) => write!(f, "feature map codec: {msg}"),
        }
    }
}

impl core::error::Error for FusionError {}

impl From<NnError> for FusionError {
    fn from(e: NnError) -> Self {
        FusionError::Nn(e)
    }
}

/// Applies a per-pixel MLP (the 1x1-convolution stack) to every pixel,
/// keeping the spatial dimensions. The usual use is reducing a backbone's
/// channel count to a small fusion width.
pub fn reduce_channels(map: &FeatureMap, params: &MlpParams) -> Result<FeatureMap, FusionError> {
    if params.in_dim() != map.channels {
        return Err(FusionError::ChannelMismatch {
            expected: params.in_dim(),
            got: map.channels,
        });
    }
    let pixels = map.height * map.width;
    let x = Tensor2::from_vec(pixels, map.channels, map.data.iter().map(|&v| v as f64).collect());
    let y = mlp_forward(params, &x)?;
    Ok(FeatureMap::new(
        map.height,
        map.width,
        params.out_dim(),
        map.stride,
        y.data.iter().map(|&v| v as f32).collect(),
    ))
}

/// Homogeneous projection of a sensor-frame point: returns `(u, v, depth)`
/// in pixel units; validity (positive depth, in-image) is the caller's call.
pub fn project(p: [f64; 3], calib: &Calibration) -> (f64, f64, f64) {
    let h: Vec<f64> = calib
        .proj
        .iter()
        .map(|row| row[0] * p[0] + row[1] * p[1] + row[2] * p[2] + row[3])
        .collect();
    (h[0] / h[2], h[1] / h[2], h[2])
}

/// 4-tap bilinear sample at feature-grid coordinates. Coordinates are
/// clamped to `[0, W-1] x [0, H-1]`; the four corner weights sum to 1.
pub fn bilinear_sample(map: &FeatureMap, u: f64, v: f64) -> Vec<f64> {
    let u = u.clamp(0.0, (map.width - 1) as f64);
    let v = v.clamp(0.0, (map.height - 1) as f64);
    let x0 = math::floor(u) as usize;
    let y0 = math::floor(v) as usize;
    let x1 = (x0 + 1).min(map.width - 1);
    let y1 = (y0 + 1).min(map.height - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let w00 = (1.0 - fx) * (1.0 - fy);
    let w10 = fx * (1.0 - fy);
    let w01 = (1.0 - fx) * fy;
    let w11 = fx * fy;
    let (p00, p10, p01, p11) = (
        map.pixel(y0, x0),
        map.pixel(y0, x1),
        map.pixel(y1, x0),
        map.pixel(y1, x1),
    );
    (0..map.channels)
        .map(|c| {
            w00 * p00[c] as f64 + w10 * p10[c] as f64 + w01 * p01[c] as f64 + w11 * p11[c] as f64
        })
        .collect()
}

/// Image feature of one node: project to pixels, check validity, divide by
/// the map stride, and sample. Behind-camera or out-of-image nodes get
/// zeros.
pub fn node_image_feature(position: &Point4, map: &FeatureMap, calib: &Calibration) -> Vec<f64> {
    let (u, v, depth) = project([position.x, position.y, position.z], calib);
    let in_image = depth > 0.0
        && u >= 0.0
        && u < calib.image_width as f64
        && v >= 0.0
        && v < calib.image_height as f64;
    if !in_image {
        return alloc::vec![0.0; map.channels];
    }
    bilinear_sample(map, u / map.stride, v / map.stride)
}

/// Appends each node's sampled image feature to its initial state row. The
/// original columns are passed through untouched.
pub fn decorate_nodes(
    s0: &Tensor2,
    positions: &[Point4],
    map: &FeatureMap,
    calib: &Calibration,
) -> Tensor2 {
    assert_eq!(s0.rows, positions.len());
    let mut out = Tensor2::zeros(s0.rows, s0.cols + map.channels);
    for j in 0..s0.rows {
        let feature = node_image_feature(&positions[j], map, calib);
        let dst = out.row_mut(j);
        dst[..s0.cols].copy_from_slice(s0.row(j));
        dst[s0.cols..].copy_from_slice(&feature);
    }
    out
}

// ---------------------------------------------------------------------------
// Feature map container: magic "RGF1", u32 height, u32 width, u32 channels,
// f32 stride, then f32 data row-major. Little-endian throughout.
// ---------------------------------------------------------------------------

pub const FEATURE_MAP_MAGIC: [u8; 4] = *b"RGF1";

pub fn encode_feature_map(map: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + map.data.len() * 4);
    out.extend_from_slice(&FEATURE_MAP_MAGIC);
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    out.extend_from_slice(&(map.channels as u32).to_le_bytes());
    out.extend_from_slice(&(map.stride as f32).to_le_bytes());
    for v in &map.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_feature_map(bytes: &[u8]) -> Result<FeatureMap, FusionError> {
    let fail = |msg: &str| FusionError::Codec(String::from(msg));
    if bytes.len() < 20 {
        return Err(fail("truncated header"));
    }
    if bytes[0..4] != FEATURE_MAP_MAGIC {
        return Err(fail("bad magic, expected RGF1"));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let height = u32_at(4) as usize;
    let width = u32_at(8) as usize;
    let channels = u32_at(12) as usize;
    let stride = f32::from_le_bytes(bytes[16..20].try_into().unwrap()) as f64;
    if stride <= 0.0 || !stride.is_finite() {
        return Err(fail("nonpositive stride"));
    }
    let count = height
        .checked_mul(width)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| fail("dimension overflow"))?;
    if bytes.len() != 20 + count * 4 {
        return Err(fail("data length does not match dimensions"));
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let off = 20 + i * 4;
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if !v.is_finite() {
            return Err(fail("non-finite feature value"));
        }
        data.push(v);
    }
    Ok(FeatureMap::new(height, width, channels, stride, data))
}

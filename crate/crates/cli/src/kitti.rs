//! KITTI-format ingestion: velodyne `.bin` point clouds, calibration files,
//! and label files converted into sensor-frame boxes, plus writers used for
//! round-trip tests and synthetic fixtures.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use roigraph_core::fusion::Calibration;
use roigraph_core::geom::{Box3D, Point4, PointCloud};
use roigraph_core::head::wrap_to_pi;

#[derive(Debug)]
pub enum KittiError {
    Io(io::Error),
    /// Cloud file size is not a multiple of 16 bytes.
    BadCloudSize { bytes: usize },
    Malformed { line: usize, message: String },
}

impl fmt::Display for KittiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KittiError::Io(e) => write!(f, "{e}"),
            KittiError::BadCloudSize { bytes } => {
                write!(f, "cloud file is {bytes} bytes, not a multiple of 16")
            }
            KittiError::Malformed { line, message } => {
                write!(f, "line {line}: {message}")
            }
        }
    }
}

impl std::error::Error for KittiError {}

impl From<io::Error> for KittiError {
    fn from(e: io::Error) -> Self {
        KittiError::Io(e)
    }
}

/// Little-endian float32 quadruples `(x, y, z, reflectance)` in file order.
pub fn load_cloud(path: &Path) -> Result<PointCloud, KittiError> {
    decode_cloud(&fs::read(path)?)
}

pub fn decode_cloud(bytes: &[u8]) -> Result<PointCloud, KittiError> {
    if bytes.len() % 16 != 0 {
        return Err(KittiError::BadCloudSize { bytes: bytes.len() });
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for chunk in bytes.chunks_exact(16) {
        let f = |o: usize| f32::from_le_bytes(chunk[o..o + 4].try_into().unwrap()) as f64;
        points.push(Point4::new(f(0), f(4), f(8), f(12)));
    }
    Ok(PointCloud::new(points))
}

pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for p in cloud.iter() {
        for v in [p.x, p.y, p.z, p.r] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_cloud(path: &Path, cloud: &PointCloud) -> Result<(), KittiError> {
    fs::write(path, encode_cloud(cloud))?;
    Ok(())
}

type Mat3 = [[f64; 3]; 3];

fn mat3_identity() -> Mat3 {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

fn mat3_mul_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

/// General 3x3 inverse via the adjugate (rectification matrices in the wild
/// are close to orthonormal but not exactly, so no transpose shortcut).
fn mat3_inverse(m: &Mat3) -> Mat3 {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let inv = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    out[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv;
    out[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv;
    out[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv;
    out[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv;
    out[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv;
    out[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv;
    out[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv;
    out[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv;
    out[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv;
    out
}

/// Parsed KITTI calibration: camera projection `P2`, rectification
/// `R0_rect`, and the sensor-to-camera transform `Tr_velo_to_cam`.
#[derive(Clone, Debug, PartialEq)]
pub struct KittiCalib {
    pub p2: [[f64; 4]; 3],
    pub r0: Mat3,
    pub tr_rot: Mat3,
    pub tr_t: [f64; 3],
}

impl Default for KittiCalib {
    fn default() -> Self {
        Self {
            p2: [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ],
            r0: mat3_identity(),
            tr_rot: mat3_identity(),
            tr_t: [0.0; 3],
        }
    }
}

impl KittiCalib {
    /// Sensor point to rectified-camera coordinates: `R0 (Tr_R p + Tr_t)`.
    pub fn sensor_to_rect(&self, p: [f64; 3]) -> [f64; 3] {
        let cam = mat3_mul_vec(&self.tr_rot, p);
        let cam = [cam[0] + self.tr_t[0], cam[1] + self.tr_t[1], cam[2] + self.tr_t[2]];
        mat3_mul_vec(&self.r0, cam)
    }

    /// Rectified-camera coordinates back to the sensor frame.
    pub fn rect_to_sensor(&self, p: [f64; 3]) -> [f64; 3] {
        let cam = mat3_mul_vec(&mat3_inverse(&self.r0), p);
        let cam = [cam[0] - self.tr_t[0], cam[1] - self.tr_t[1], cam[2] - self.tr_t[2]];
        mat3_mul_vec(&mat3_inverse(&self.tr_rot), cam)
    }

    /// Composes `P2 * R0 * Tr` into the single sensor-to-pixel projection
    /// used by the fusion stage.
    pub fn to_calibration(&self, image_width: usize, image_height: usize) -> Calibration {
        let a: Mat3 = [
            [self.p2[0][0], self.p2[0][1], self.p2[0][2]],
            [self.p2[1][0], self.p2[1][1], self.p2[1][2]],
            [self.p2[2][0], self.p2[2][1], self.p2[2][2]],
        ];
        let m = mat3_mul(&mat3_mul(&a, &self.r0), &self.tr_rot);
        let rt = mat3_mul_vec(&self.r0, self.tr_t);
        let art = mat3_mul_vec(&a, rt);
        let mut proj = [[0.0; 4]; 3];
        for i in 0..3 {
            proj[i][..3].copy_from_slice(&m[i]);
            proj[i][3] = art[i] + self.p2[i][3];
        }
        Calibration { proj, image_width, image_height }
    }
}

fn parse_floats(line_no: usize, values: &[&str], expect: usize) -> Result<Vec<f64>, KittiError> {
    if values.len() != expect {
        return Err(KittiError::Malformed {
            line: line_no,
            message: format!("expected {expect} values, found {}", values.len()),
        });
    }
    values
        .iter()
        .map(|s| {
            s.parse::<f64>().map_err(|_| KittiError::Malformed {
                line: line_no,
                message: format!("bad float `{s}`"),
            })
        })
        .collect()
}

/// Parses `P2`, `R0_rect` and `Tr_velo_to_cam`; other keys are ignored.
pub fn load_calib(path: &Path) -> Result<KittiCalib, KittiError> {
    parse_calib(&fs::read_to_string(path)?)
}

pub fn parse_calib(text: &str) -> Result<KittiCalib, KittiError> {
    let mut calib = KittiCalib::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        let values: Vec<&str> = rest.split_whitespace().collect();
        match key.trim() {
            "P2" => {
                let v = parse_floats(line_no, &values, 12)?;
                for r in 0..3 {
                    calib.p2[r].copy_from_slice(&v[r * 4..r * 4 + 4]);
                }
            }
            "R0_rect" => {
                let v = parse_floats(line_no, &values, 9)?;
                for r in 0..3 {
                    calib.r0[r].copy_from_slice(&v[r * 3..r * 3 + 3]);
                }
            }
            "Tr_velo_to_cam" => {
                let v = parse_floats(line_no, &values, 12)?;
                for r in 0..3 {
                    calib.tr_rot[r].copy_from_slice(&v[r * 4..r * 4 + 3]);
                    calib.tr_t[r] = v[r * 4 + 3];
                }
            }
            _ => {}
        }
    }
    Ok(calib)
}

pub fn write_calib(calib: &KittiCalib) -> String {
    let row = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut p2 = Vec::new();
    let mut tr = Vec::new();
    let mut r0 = Vec::new();
    for r in 0..3 {
        p2.extend_from_slice(&calib.p2[r]);
        r0.extend_from_slice(&calib.r0[r]);
        tr.extend_from_slice(&calib.tr_rot[r]);
        tr.push(calib.tr_t[r]);
    }
    format!(
        "P2: {}\nR0_rect: {}\nTr_velo_to_cam: {}\n",
        row(&p2),
        row(&r0),
        row(&tr)
    )
}

/// A parsed label: class name plus the sensor-frame box.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBox {
    pub class: String,
    pub box3d: Box3D,
}

/// Parses KITTI label lines
/// `type trunc occl alpha x1 y1 x2 y2 h w l x y z ry [score]`, converting
/// each camera-frame pose to a sensor-frame box: the bottom-center location
/// is lifted by `h/2` along the camera's down axis, mapped through
/// `Tr^-1 R0^-1`, and the camera yaw `ry` becomes `-ry - pi/2` about the
/// sensor's up axis. `DontCare` lines are skipped.
pub fn load_labels(path: &Path, calib: &KittiCalib) -> Result<Vec<LabeledBox>, KittiError> {
    parse_labels(&fs::read_to_string(path)?, calib)
}

pub fn parse_labels(text: &str, calib: &KittiCalib) -> Result<Vec<LabeledBox>, KittiError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields[0] == "DontCare" {
            continue;
        }
        if fields.len() < 15 {
            return Err(KittiError::Malformed {
                line: line_no,
                message: format!("expected at least 15 fields, found {}", fields.len()),
            });
        }
        let class = fields[0].to_string();
        let nums = parse_floats(line_no, &fields[1..15], 14)?;
        let (h, w, l) = (nums[7], nums[8], nums[9]);
        if l <= 0.0 || w <= 0.0 || h <= 0.0 {
            return Err(KittiError::Malformed {
                line: line_no,
                message: format!("nonpositive box size ({l}, {w}, {h})"),
            });
        }
        let (x, y, z, ry) = (nums[10], nums[11], nums[12], nums[13]);
        // The label stores the bottom-face center; camera y points down.
        let center_rect = [x, y - h / 2.0, z];
        let c = calib.rect_to_sensor(center_rect);
        let yaw = wrap_to_pi(-ry - std::f64::consts::FRAC_PI_2);
        out.push(LabeledBox {
            class,
            box3d: Box3D::new(c[0], c[1], c[2], l, w, h, yaw),
        });
    }
    Ok(out)
}

/// Inverse of [`parse_labels`] for round-trip tests and synthetic fixtures.
/// The 2D fields it cannot know (truncation, occlusion, alpha, image bbox)
/// are written as zeros.
pub fn write_labels(boxes: &[LabeledBox], calib: &KittiCalib) -> String {
    let mut out = String::new();
    for lb in boxes {
        let b = &lb.box3d;
        let rect = calib.sensor_to_rect([b.cx, b.cy, b.cz]);
        let location = [rect[0], rect[1] + b.h / 2.0, rect[2]];
        let ry = wrap_to_pi(-b.yaw - std::f64::consts::FRAC_PI_2);
        out.push_str(&format!(
            "{} 0 0 0 0 0 0 0 {} {} {} {} {} {} {}\n",
            lb.class, b.h, b.w, b.l, location[0], location[1], location[2], ry
        ));
    }
    out
}

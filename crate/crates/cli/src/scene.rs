//! A loaded or synthesized scene: one point cloud, the proposals to refine,
//! optional ground truths, and optional camera data for fusion.

use roigraph_core::fusion::{Calibration, FeatureMap};
use roigraph_core::geom::{Box3D, PointCloud};

#[derive(Clone, Debug, Default)]
pub struct Scene {
    pub cloud: PointCloud,
    pub proposals: Vec<Box3D>,
    pub ground_truths: Vec<Box3D>,
    pub feature_map: Option<FeatureMap>,
    pub calibration: Option<Calibration>,
}

impl Scene {
    pub fn image(&self) -> Option<(&FeatureMap, &Calibration)> {
        match (&self.feature_map, &self.calibration) {
            (Some(m), Some(c)) => Some((m, c)),
            _ => None,
        }
    }
}

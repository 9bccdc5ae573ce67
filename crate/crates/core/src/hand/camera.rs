use serde::{Deserialize, Serialize};

use super::skeleton::Vec3;
use crate::error::{Error, Result};

/// Pinhole camera looking down +z. Joints are pushed `hand_distance` along
/// the optical axis before projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub focal: f64,
    pub principal: [f64; 2],
    pub hand_distance: f64,
}

impl Default for Camera {
    /// Focal length equal to the hand distance, so image units match model
    /// units at the depth of the palm.
    fn default() -> Self {
        Self {
            focal: 10.0,
            principal: [0.0, 0.0],
            hand_distance: 10.0,
        }
    }
}

impl Camera {
    pub fn project_point(&self, p: Vec3) -> Result<[f64; 2]> {
        let z = p[2] + self.hand_distance;
        if z <= 0.0 || z.is_nan() {
            return Err(Error::NonPositiveDepth { joint: 0, depth: z });
        }
        Ok([
            self.focal * p[0] / z + self.principal[0],
            self.focal * p[1] / z + self.principal[1],
        ])
    }
}

pub fn project(joints: &[Vec3], cam: &Camera) -> Result<Vec<[f64; 2]>> {
    joints
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            cam.project_point(p).map_err(|e| match e {
                Error::NonPositiveDepth { depth, .. } => Error::NonPositiveDepth { joint: i, depth },
                other => other,
            })
        })
        .collect()
}

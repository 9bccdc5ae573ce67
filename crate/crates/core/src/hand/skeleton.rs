//! 21-joint kinematic hand and its forward kinematics.
//!
//! Joint ordering: 0 is the palm root, then thumb, index, middle, ring and
//! pinky, four joints each from base to tip (`1 + 4·finger + k`). Data using
//! another convention (e.g. wrist at index 0) must be remapped first.
//!
//! Root frame: +y points along the middle finger, +z is the palm normal
//! (positive flexion curls towards +z), +x points towards the pinky.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 21;
pub const NUM_BONES: usize = 20;
pub const NUM_FINGERS: usize = 5;
/// Palm root joint.
pub const PALM: usize = 0;
/// First (proximal) joint of the middle finger.
pub const MIDDLE_BASE: usize = 9;

/// Rotation vector (3) + translation (3) + 4 angles per finger.
pub const DOF: usize = 6 + 4 * NUM_FINGERS;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Handedness {
    Left,
    Right,
}

impl Handedness {
    /// ±1 encoding fed to models: right = +1, left = −1.
    pub fn sign(self) -> f64 {
        match self {
            Handedness::Right => 1.0,
            Handedness::Left => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Handedness::Right => Handedness::Left,
            Handedness::Left => Handedness::Right,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Handedness::Right => "R",
            Handedness::Left => "L",
        }
    }

    pub fn from_code(s: &str) -> Option<Self> {
        match s {
            "R" => Some(Handedness::Right),
            "L" => Some(Handedness::Left),
            _ => None,
        }
    }
}

pub fn finger_joint(finger: usize, k: usize) -> usize {
    1 + 4 * finger + k
}

/// Parent of every joint; the root is its own parent.
pub fn parent(joint: usize) -> usize {
    if joint == PALM || (joint - 1).is_multiple_of(4) {
        PALM
    } else {
        joint - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleLimit {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandSkeleton {
    /// Rest direction of the bone ending at joint `j` (index `j - 1`).
    pub rest_direction: [Vec3; NUM_BONES],
    pub bone_length: [f64; NUM_BONES],
    pub limits: [AngleLimit; DOF],
}

const DEG: f64 = PI / 180.0;

/// Half-width of the box the generator draws root translations from.
pub const TRANSLATION_RANGE: f64 = 0.5;

impl Default for HandSkeleton {
    fn default() -> Self {
        Self::canonical()
    }
}

impl HandSkeleton {
    /// The fixed right-hand skeleton used by the generator. Lengths are in
    /// units of the palm → middle-finger-base distance.
    pub fn canonical() -> Self {
        // (metacarpal offset from the palm root, finger direction, phalanx lengths)
        let fingers: [(Vec3, Vec3, [f64; 3]); NUM_FINGERS] = [
            ([-0.45, -0.55, 0.10], [-0.60, 0.80, 0.15], [0.75, 0.60, 0.50]),
            ([-0.32, 0.97, 0.0], [-0.10, 1.0, 0.0], [0.90, 0.55, 0.45]),
            ([0.0, 1.0, 0.0], [0.0, 1.0, 0.0], [1.00, 0.62, 0.50]),
            ([0.30, 0.94, 0.0], [0.08, 1.0, 0.0], [0.93, 0.60, 0.48]),
            ([0.56, 0.80, 0.0], [0.18, 1.0, 0.0], [0.72, 0.45, 0.40]),
        ];
        let mut rest_direction = [[0.0; 3]; NUM_BONES];
        let mut bone_length = [0.0; NUM_BONES];
        for (f, (offset, dir, phalanges)) in fingers.iter().enumerate() {
            let len = norm(*offset);
            rest_direction[4 * f] = scale(*offset, 1.0 / len);
            bone_length[4 * f] = len;
            let d = normalize(*dir);
            for k in 0..3 {
                rest_direction[4 * f + 1 + k] = d;
                bone_length[4 * f + 1 + k] = phalanges[k];
            }
        }
        let mut limits = [AngleLimit { min: 0.0, max: 0.0 }; DOF];
        for l in limits.iter_mut().take(3) {
            *l = AngleLimit { min: -PI, max: PI };
        }
        // Translation is unconstrained; the generator draws it from
        // ±TRANSLATION_RANGE.
        for l in limits.iter_mut().skip(3).take(3) {
            *l = AngleLimit {
                min: f64::NEG_INFINITY,
                max: f64::INFINITY,
            };
        }
        for f in 0..NUM_FINGERS {
            limits[6 + 4 * f] = AngleLimit {
                min: -15.0 * DEG,
                max: 15.0 * DEG,
            };
            for k in 1..4 {
                limits[6 + 4 * f + k] = AngleLimit { min: 0.0, max: 90.0 * DEG };
            }
        }
        Self {
            rest_direction,
            bone_length,
            limits,
        }
    }

    pub fn check_limits(&self, angles: &[f64]) -> Result<()> {
        if angles.len() != DOF {
            return Err(Error::InvalidArgument(format!(
                "expected {DOF} angles, got {}",
                angles.len()
            )));
        }
        // The rotation vector is limited by its norm, not per component.
        let rot_norm = norm([angles[0], angles[1], angles[2]]);
        if rot_norm > PI + 1e-12 {
            return Err(Error::AngleOutOfLimits {
                index: 0,
                value: rot_norm,
                min: 0.0,
                max: PI,
            });
        }
        for (i, (&a, l)) in angles.iter().zip(&self.limits).enumerate().skip(3) {
            if !(l.min..=l.max).contains(&a) {
                return Err(Error::AngleOutOfLimits {
                    index: i,
                    value: a,
                    min: l.min,
                    max: l.max,
                });
            }
        }
        Ok(())
    }

    /// Orthonormal frame of finger `f`: columns (x, y = finger direction, z ≈ palm normal).
    fn finger_frame(&self, f: usize) -> Mat3 {
        let y = self.rest_direction[4 * f + 1];
        let n = [0.0, 0.0, 1.0];
        let z = normalize(sub(n, scale(y, dot(n, y))));
        let x = cross(y, z);
        [[x[0], y[0], z[0]], [x[1], y[1], z[1]], [x[2], y[2], z[2]]]
    }
}

/// Joint positions of a right hand for the given pose.
///
/// Angle layout: `[rx, ry, rz]` global rotation vector, `[tx, ty, tz]` global
/// translation, then per finger `[abduction, base flexion, middle flexion,
/// distal flexion]`.
pub fn forward_kinematics(skel: &HandSkeleton, angles: &[f64]) -> Result<[Vec3; NUM_JOINTS]> {
    skel.check_limits(angles)?;
    let mut local = [[0.0; 3]; NUM_JOINTS];
    for f in 0..NUM_FINGERS {
        let base = finger_joint(f, 0);
        local[base] = scale(skel.rest_direction[4 * f], skel.bone_length[4 * f]);
        let frame = skel.finger_frame(f);
        let a = &angles[6 + 4 * f..6 + 4 * f + 4];
        let spread = mat_mul(&frame, &rot_z(a[0]));
        let mut flex = 0.0;
        for k in 1..4 {
            flex += a[k];
            let r = mat_mul(&spread, &rot_x(flex));
            let bone = mat_vec(&r, [0.0, skel.bone_length[4 * f + k], 0.0]);
            local[base + k] = add(local[base + k - 1], bone);
        }
    }
    let global = rotation_from_vector([angles[0], angles[1], angles[2]]);
    let t = [angles[3], angles[4], angles[5]];
    let mut out = [[0.0; 3]; NUM_JOINTS];
    for (o, p) in out.iter_mut().zip(&local) {
        *o = add(mat_vec(&global, *p), t);
    }
    Ok(out)
}

/// Mirrors x → −x.
pub fn mirror<const D: usize>(joints: &mut [[f64; D]]) {
    for j in joints {
        j[0] = -j[0];
    }
}

// Small fixed-size linear algebra helpers.

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, o) in row.iter_mut().enumerate() {
            *o = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn rot_x(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

pub fn rot_z(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// Rodrigues' formula.
pub fn rotation_from_vector(r: Vec3) -> Mat3 {
    let theta = norm(r);
    if theta == 0.0 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let k = scale(r, 1.0 / theta);
    let (s, c) = theta.sin_cos();
    let v = 1.0 - c;
    [
        [c + k[0] * k[0] * v, k[0] * k[1] * v - k[2] * s, k[0] * k[2] * v + k[1] * s],
        [k[1] * k[0] * v + k[2] * s, c + k[1] * k[1] * v, k[1] * k[2] * v - k[0] * s],
        [k[2] * k[0] * v - k[1] * s, k[2] * k[1] * v + k[0] * s, c + k[2] * k[2] * v],
    ]
}

/// Inverse of [`rotation_from_vector`], returning a vector of norm ≤ π.
pub fn rotation_to_vector(m: &Mat3) -> Vec3 {
    // Via the quaternion, which is stable at all angles.
    let tr = m[0][0] + m[1][1] + m[2][2];
    let (w, x, y, z) = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        (0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s)
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
        ((m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s)
    } else if m[1][1] > m[2][2] {
        let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
        ((m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s)
    } else {
        let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
        ((m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s)
    };
    quaternion_to_vector([w, x, y, z])
}

pub fn quaternion_to_vector(q: [f64; 4]) -> Vec3 {
    let [mut w, mut x, mut y, mut z] = q;
    let n = (w * w + x * x + y * y + z * z).sqrt();
    w /= n;
    x /= n;
    y /= n;
    z /= n;
    if w < 0.0 {
        w = -w;
        x = -x;
        y = -y;
        z = -z;
    }
    let s = (x * x + y * y + z * z).sqrt();
    if s < 1e-300 {
        return [0.0; 3];
    }
    let theta = (2.0 * s.atan2(w)).min(PI);
    [x / s * theta, y / s * theta, z / s * theta]
}

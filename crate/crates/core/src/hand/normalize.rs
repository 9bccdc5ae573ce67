//! Keypoint normalizations: palm-relative translation (T), reference-bone
//! scale (S) and handedness mirroring (H), plus the wrist → palm adjustment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::skeleton::{mirror, Handedness, MIDDLE_BASE, NUM_JOINTS, PALM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NormFlags {
    /// Subtract the palm joint.
    pub translate: bool,
    /// Divide by the palm → middle-finger-base distance.
    pub scale: bool,
    /// Mirror left hands so everything is right-handed.
    pub mirror_left: bool,
}

impl NormFlags {
    pub const NONE: NormFlags = NormFlags {
        translate: false,
        scale: false,
        mirror_left: false,
    };
}

impl fmt::Display for NormFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        for (on, c) in [(self.translate, 'T'), (self.scale, 'S'), (self.mirror_left, 'H')] {
            if on {
                if !s.is_empty() {
                    s.push(',');
                }
                s.push(c);
            }
        }
        if s.is_empty() {
            s.push_str("none");
        }
        f.write_str(&s)
    }
}

impl FromStr for NormFlags {
    type Err = Error;

    /// Parses lists such as `T,S`, `TSH` or `none`.
    fn from_str(s: &str) -> Result<Self> {
        let mut flags = NormFlags::NONE;
        if s.trim().eq_ignore_ascii_case("none") {
            return Ok(flags);
        }
        for c in s.chars().filter(|c| !matches!(c, ',' | ' ' | '+')) {
            match c.to_ascii_uppercase() {
                'T' => flags.translate = true,
                'S' => flags.scale = true,
                'H' => flags.mirror_left = true,
                _ => return Err(Error::InvalidArgument(format!("unknown normalization flag {c:?}"))),
            }
        }
        Ok(flags)
    }
}

fn check_count(n: usize) -> Result<()> {
    if n != NUM_JOINTS {
        return Err(Error::InvalidArgument(format!("expected {NUM_JOINTS} keypoints, got {n}")));
    }
    Ok(())
}

/// Applies T, then S, then H. Returns the normalized keypoints and the scale
/// divisor (1 when S is off).
pub fn normalize_pose<const D: usize>(
    joints: &[[f64; D]],
    flags: NormFlags,
    handedness: Handedness,
) -> Result<(Vec<[f64; D]>, f64)> {
    check_count(joints.len())?;
    let mut out = joints.to_vec();
    if flags.translate {
        let palm = joints[PALM];
        for j in &mut out {
            for c in 0..D {
                j[c] -= palm[c];
            }
        }
    }
    let mut divisor = 1.0;
    if flags.scale {
        let len = (0..D)
            .map(|c| (out[MIDDLE_BASE][c] - out[PALM][c]).powi(2))
            .sum::<f64>()
            .sqrt();
        if len == 0.0 || !len.is_finite() {
            return Err(Error::DegeneratePose);
        }
        divisor = len;
        for j in &mut out {
            for v in j.iter_mut() {
                *v /= len;
            }
        }
    }
    if flags.mirror_left && handedness == Handedness::Left {
        mirror(&mut out);
    }
    Ok((out, divisor))
}

/// Replaces joint 0 (a wrist) with the midpoint of the wrist and the first
/// middle-finger joint.
pub fn wrist_to_palm<const D: usize>(joints: &[[f64; D]]) -> Result<Vec<[f64; D]>> {
    check_count(joints.len())?;
    let mut out = joints.to_vec();
    for c in 0..D {
        out[PALM][c] = 0.5 * (joints[PALM][c] + joints[MIDDLE_BASE][c]);
    }
    Ok(out)
}

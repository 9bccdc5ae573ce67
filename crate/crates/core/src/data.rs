//! Turning pose samples into model-ready tensors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand::{normalize_pose, wrist_to_palm, Handedness, NormFlags, PoseSample};
use crate::models::Modality;
use crate::tensor::Tensor;

/// How handedness reaches the models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum HandednessMode {
    /// ±1 feature appended to encoder inputs.
    #[default]
    Flag,
    /// Left hands are mirrored to right hands before training.
    Mirror,
    /// Handedness is dropped entirely.
    Ignore,
}

impl HandednessMode {
    pub fn as_str(self) -> &'static str {
        match self {
            HandednessMode::Flag => "flag",
            HandednessMode::Mirror => "mirror",
            HandednessMode::Ignore => "ignore",
        }
    }

    /// Whether models built for this mode take the handedness feature.
    pub fn model_input(self) -> bool {
        self == HandednessMode::Flag
    }
}

impl fmt::Display for HandednessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HandednessMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "flag" => Ok(HandednessMode::Flag),
            "mirror" => Ok(HandednessMode::Mirror),
            "ignore" | "none" => Ok(HandednessMode::Ignore),
            other => Err(Error::InvalidArgument(format!("unknown handedness mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub norm2d: NormFlags,
    pub norm3d: NormFlags,
    pub handedness: HandednessMode,
    /// Replace joint 0 by the wrist/middle-base midpoint before normalizing.
    pub wrist_to_palm: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            norm2d: NormFlags {
                translate: true,
                scale: true,
                mirror_left: false,
            },
            norm3d: NormFlags {
                translate: true,
                scale: true,
                mirror_left: false,
            },
            handedness: HandednessMode::Flag,
            wrist_to_palm: false,
        }
    }
}

impl PreprocessConfig {
    fn flags(&self, m: Modality) -> NormFlags {
        let mut f = match m {
            Modality::Keypoints2d => self.norm2d,
            Modality::Joints3d => self.norm3d,
        };
        f.mirror_left = self.handedness == HandednessMode::Mirror;
        f
    }
}

/// Flattened, normalized keypoints of a sample set, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalData {
    pub x2d: Tensor,
    pub x3d: Tensor,
    pub handedness: Vec<Handedness>,
    pub labeled: Vec<bool>,
    /// Sample indices as stored in the dataset.
    pub index: Vec<usize>,
    /// Whether encoders should be fed `handedness`.
    pub feed_handedness: bool,
}

fn flatten<const D: usize>(
    joints: &[[f64; D]],
    flags: NormFlags,
    hand: Handedness,
    palm: bool,
    out: &mut Vec<f64>,
) -> Result<()> {
    let adjusted;
    let src = if palm {
        adjusted = wrist_to_palm(joints)?;
        &adjusted[..]
    } else {
        joints
    };
    let (n, _) = normalize_pose(src, flags, hand)?;
    out.extend(n.iter().flatten());
    Ok(())
}

impl ModalData {
    pub fn build(samples: &[PoseSample], cfg: &PreprocessConfig) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no samples".into()));
        }
        let n = samples.len();
        let mut d2 = Vec::with_capacity(n * Modality::Keypoints2d.flat_dim());
        let mut d3 = Vec::with_capacity(n * Modality::Joints3d.flat_dim());
        let f2 = cfg.flags(Modality::Keypoints2d);
        let f3 = cfg.flags(Modality::Joints3d);
        for s in samples {
            flatten(&s.joints2d, f2, s.handedness, cfg.wrist_to_palm, &mut d2)?;
            flatten(&s.joints3d, f3, s.handedness, cfg.wrist_to_palm, &mut d3)?;
        }
        Ok(Self {
            x2d: Tensor::new(vec![n, Modality::Keypoints2d.flat_dim()], d2)?,
            x3d: Tensor::new(vec![n, Modality::Joints3d.flat_dim()], d3)?,
            handedness: samples.iter().map(|s| s.handedness).collect(),
            labeled: samples.iter().map(|s| s.labeled).collect(),
            index: samples.iter().map(|s| s.index).collect(),
            feed_handedness: cfg.handedness.model_input(),
        })
    }

    pub fn len(&self) -> usize {
        self.handedness.len()
    }

    pub fn is_empty(&self) -> bool {
        self.handedness.is_empty()
    }

    pub fn get(&self, m: Modality) -> &Tensor {
        match m {
            Modality::Keypoints2d => &self.x2d,
            Modality::Joints3d => &self.x3d,
        }
    }

    /// Handedness flags in the form encoders expect, `None` unless fed.
    pub fn hand_input(&self) -> Option<&[Handedness]> {
        self.feed_handedness.then_some(&self.handedness[..])
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self {
            x2d: self.x2d.select_rows(idx)?,
            x3d: self.x3d.select_rows(idx)?,
            handedness: idx.iter().map(|&i| self.handedness[i]).collect(),
            labeled: idx.iter().map(|&i| self.labeled[i]).collect(),
            index: idx.iter().map(|&i| self.index[i]).collect(),
            feed_handedness: self.feed_handedness,
        })
    }

    /// Rows whose label flag is set.
    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labeled[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::{generate_dataset, Camera, HandSkeleton};

    fn samples(n: usize) -> Vec<PoseSample> {
        generate_dataset(&HandSkeleton::canonical(), &Camera::default(), n, 3, 0.5).unwrap()
    }

    #[test]
    fn shapes_and_palm_origin() {
        let d = ModalData::build(&samples(10), &PreprocessConfig::default()).unwrap();
        assert_eq!(d.x2d.shape(), &[10, 42]);
        assert_eq!(d.x3d.shape(), &[10, 63]);
        for i in 0..10 {
            assert_eq!(&d.x3d.row(i)[..3], &[0.0, 0.0, 0.0]);
            assert_eq!(&d.x2d.row(i)[..2], &[0.0, 0.0]);
            // Reference bone has unit length after S.
            let r = &d.x3d.row(i)[27..30];
            assert!(((r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt() - 1.0).abs() < 1e-12);
        }
        assert_eq!(d.labeled.iter().filter(|&&l| l).count(), 5);
        assert_eq!(d.hand_input().unwrap().len(), 10);
    }

    #[test]
    fn mirror_mode_makes_everything_right_handed() {
        let s = samples(20);
        let cfg = PreprocessConfig {
            handedness: HandednessMode::Mirror,
            ..Default::default()
        };
        let d = ModalData::build(&s, &cfg).unwrap();
        assert!(d.hand_input().is_none());
        let plain = ModalData::build(&s, &PreprocessConfig::default()).unwrap();
        for (i, sample) in s.iter().enumerate().take(20) {
            let sign = sample.handedness.sign();
            assert_eq!(d.x3d.row(i)[3], sign * plain.x3d.row(i)[3]);
        }
    }

    #[test]
    fn select_rows() {
        let d = ModalData::build(&samples(6), &PreprocessConfig::default()).unwrap();
        let s = d.select(&[4, 1]).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.x3d.row(0), d.x3d.row(4));
        assert_eq!(s.index, vec![4, 1]);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("Mirror".parse::<HandednessMode>().unwrap(), HandednessMode::Mirror);
        assert!("both".parse::<HandednessMode>().is_err());
        assert!(ModalData::build(&[], &PreprocessConfig::default()).is_err());
    }
}

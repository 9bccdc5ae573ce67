//! Pose samples, keypoint-space augmentation and the seeded generator.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::camera::{project, Camera};
use super::skeleton::{
    forward_kinematics, mat_mul, mat_vec, mirror, quaternion_to_vector, rot_z, rotation_from_vector,
    rotation_to_vector, Handedness, HandSkeleton, Vec3, DOF, NUM_JOINTS, TRANSLATION_RANGE,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSample {
    pub index: usize,
    pub angles: Vec<f64>,
    pub joints3d: Vec<[f64; 3]>,
    pub joints2d: Vec<[f64; 2]>,
    pub handedness: Handedness,
    pub labeled: bool,
}

impl PoseSample {
    /// Runs forward kinematics (mirrored for left hands) and projection.
    pub fn new(
        skel: &HandSkeleton,
        cam: &Camera,
        index: usize,
        angles: Vec<f64>,
        handedness: Handedness,
        labeled: bool,
    ) -> Result<Self> {
        let joints3d = handed_kinematics(skel, &angles, handedness)?;
        let joints2d = project(&joints3d, cam)?;
        Ok(Self {
            index,
            angles,
            joints3d,
            joints2d,
            handedness,
            labeled,
        })
    }
}

/// Forward kinematics followed by x-mirroring for left hands.
pub fn handed_kinematics(skel: &HandSkeleton, angles: &[f64], handedness: Handedness) -> Result<Vec<Vec3>> {
    let mut j = forward_kinematics(skel, angles)?.to_vec();
    if handedness == Handedness::Left {
        mirror(&mut j);
    }
    Ok(j)
}

/// Rotates by `angle` about the optical axis, after an optional horizontal
/// flip that toggles handedness. 2D and 3D stay projection-consistent, and
/// the stored angles are updated so the sample still satisfies its
/// kinematic definition.
pub fn augment_with(sample: &PoseSample, cam: &Camera, angle: f64, flip: bool) -> PoseSample {
    let mut out = sample.clone();
    if flip {
        mirror(&mut out.joints3d);
        for p in &mut out.joints2d {
            p[0] = 2.0 * cam.principal[0] - p[0];
        }
        out.handedness = out.handedness.flipped();
    }
    let rz = rot_z(angle);
    for j in &mut out.joints3d {
        *j = mat_vec(&rz, *j);
    }
    let (s, c) = angle.sin_cos();
    for p in &mut out.joints2d {
        let dx = p[0] - cam.principal[0];
        let dy = p[1] - cam.principal[1];
        p[0] = c * dx - s * dy + cam.principal[0];
        p[1] = s * dx + c * dy + cam.principal[1];
    }
    // Left hands are mirror(FK(angles)); mirroring conjugates the roll.
    let pose_roll = match out.handedness {
        Handedness::Right => angle,
        Handedness::Left => -angle,
    };
    let r = rot_z(pose_roll);
    let global = rotation_from_vector([out.angles[0], out.angles[1], out.angles[2]]);
    let rv = rotation_to_vector(&mat_mul(&r, &global));
    let t = mat_vec(&r, [out.angles[3], out.angles[4], out.angles[5]]);
    out.angles[..3].copy_from_slice(&rv);
    out.angles[3..6].copy_from_slice(&t);
    out
}

/// Random roll in [−45°, 45°] and a horizontal flip with probability ½.
pub fn augment(sample: &PoseSample, cam: &Camera, rng: &mut dyn RngCore) -> PoseSample {
    let angle = rng.random_range(-PI / 4.0..=PI / 4.0);
    let flip = rng.random_bool(0.5);
    augment_with(sample, cam, angle, flip)
}

/// Uniform draw within every joint limit, with a uniformly random global
/// rotation.
pub fn random_angles(skel: &HandSkeleton, rng: &mut dyn RngCore) -> Vec<f64> {
    let mut q = [0.0; 4];
    for v in &mut q {
        *v = StandardNormal.sample(rng);
    }
    let rv = quaternion_to_vector(q);
    let mut a = vec![0.0; DOF];
    a[..3].copy_from_slice(&rv);
    for t in &mut a[3..6] {
        *t = rng.random_range(-TRANSLATION_RANGE..=TRANSLATION_RANGE);
    }
    for (i, l) in skel.limits.iter().enumerate().skip(6) {
        a[i] = rng.random_range(l.min..=l.max);
    }
    a
}

/// The first `round(fraction·n)` indices of a seeded permutation are labeled.
pub fn label_mask(n: usize, fraction: f64, seed: u64) -> Result<Vec<bool>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("label fraction {fraction} not in (0, 1]")));
    }
    let k = (fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut mask = vec![false; n];
    for &i in &order[..k] {
        mask[i] = true;
    }
    Ok(mask)
}

/// Seeded synthetic dataset. Sample `i` draws from its own stream of the
/// master seed, so generation is independent of evaluation order.
pub fn generate_dataset(
    skel: &HandSkeleton,
    cam: &Camera,
    n: usize,
    seed: u64,
    label_fraction: f64,
) -> Result<Vec<PoseSample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    let labeled = label_mask(n, label_fraction, seed)?;
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let handedness = if rng.random_bool(0.5) {
                Handedness::Right
            } else {
                Handedness::Left
            };
            let angles = random_angles(skel, &mut rng);
            PoseSample::new(skel, cam, i, angles, handedness, labeled[i])
        })
        .collect()
}

/// Checks the kinematic invariants of a freshly created sample: joints equal
/// forward kinematics and projection exactly, bone lengths match.
pub fn check_sample(skel: &HandSkeleton, cam: &Camera, s: &PoseSample) -> Result<()> {
    let fk = handed_kinematics(skel, &s.angles, s.handedness)?;
    if fk != s.joints3d {
        return Err(Error::Format(format!("sample {}: joints3d differ from kinematics", s.index)));
    }
    if project(&s.joints3d, cam)? != s.joints2d {
        return Err(Error::Format(format!("sample {}: joints2d differ from projection", s.index)));
    }
    check_bone_lengths(skel, &s.joints3d, 1e-9)
}

pub fn check_bone_lengths(skel: &HandSkeleton, joints3d: &[Vec3], tol: f64) -> Result<()> {
    if joints3d.len() != NUM_JOINTS {
        return Err(Error::InvalidArgument("expected 21 joints".into()));
    }
    for j in 1..NUM_JOINTS {
        let p = super::skeleton::parent(j);
        let len = super::skeleton::norm(super::skeleton::sub(joints3d[j], joints3d[p]));
        if (len - skel.bone_length[j - 1]).abs() > tol {
            return Err(Error::Format(format!("bone {j} has length {len}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: usize) -> (HandSkeleton, Camera, Vec<PoseSample>) {
        let skel = HandSkeleton::canonical();
        let cam = Camera::default();
        let d = generate_dataset(&skel, &cam, n, 42, 0.25).unwrap();
        (skel, cam, d)
    }

    #[test]
    fn label_count() {
        let (_, _, d) = data(100);
        assert_eq!(d.iter().filter(|s| s.labeled).count(), 25);
    }

    #[test]
    fn deterministic() {
        let (_, _, a) = data(20);
        let (_, _, b) = data(20);
        assert_eq!(a, b);
    }

    #[test]
    fn samples_are_consistent() {
        let (skel, cam, d) = data(200);
        assert!(d.iter().any(|s| s.handedness == Handedness::Left));
        assert!(d.iter().any(|s| s.handedness == Handedness::Right));
        for s in &d {
            check_sample(&skel, &cam, s).unwrap();
        }
    }

    #[test]
    fn zero_augmentation_is_identity() {
        let (_, cam, d) = data(3);
        for s in &d {
            let a = augment_with(s, &cam, 0.0, false);
            assert_eq!(a.joints3d, s.joints3d);
            assert_eq!(a.joints2d, s.joints2d);
        }
    }

    #[test]
    fn inverse_rotations_cancel() {
        let (_, cam, d) = data(5);
        for s in &d {
            let a = augment_with(&augment_with(s, &cam, PI / 4.0, false), &cam, -PI / 4.0, false);
            for (p, q) in a.joints3d.iter().zip(&s.joints3d) {
                for c in 0..3 {
                    assert!((p[c] - q[c]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn augmented_samples_stay_consistent() {
        let (skel, cam, d) = data(50);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for s in &d {
            let a = augment(s, &cam, &mut rng);
            check_bone_lengths(&skel, &a.joints3d, 1e-9).unwrap();
            let reproj = project(&a.joints3d, &cam).unwrap();
            for (p, q) in reproj.iter().zip(&a.joints2d) {
                assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
            }
            let fk = handed_kinematics(&skel, &a.angles, a.handedness).unwrap();
            for (p, q) in fk.iter().zip(&a.joints3d) {
                for c in 0..3 {
                    assert!((p[c] - q[c]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn invalid_arguments() {
        let skel = HandSkeleton::canonical();
        let cam = Camera::default();
        assert!(generate_dataset(&skel, &cam, 0, 1, 0.5).is_err());
        assert!(generate_dataset(&skel, &cam, 10, 1, 0.0).is_err());
        assert!(generate_dataset(&skel, &cam, 10, 1, 1.5).is_err());
    }
}

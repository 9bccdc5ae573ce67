//! End-point error, PCK and PCF.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result, TensorError};
use crate::hand::NUM_JOINTS;
use crate::tensor::Tensor;

/// Per-frame per-joint Euclidean distances, row-major `[frames × joints]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointErrors {
    pub frames: usize,
    pub joints: usize,
    pub values: Vec<f64>,
}

impl JointErrors {
    pub fn new(frames: usize, joints: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != frames * joints {
            return Err(TensorError::DataLength {
                shape: vec![frames, joints],
                len: values.len(),
            }
            .into());
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("joint errors must be finite and non-negative".into()));
        }
        Ok(Self { frames, joints, values })
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        &self.values[f * self.joints..(f + 1) * self.joints]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Errors between `[frames × 63]` 3D predictions and ground truth.
pub fn joint_errors(pred: &Tensor, gt: &Tensor) -> Result<JointErrors> {
    joint_errors_dim(pred, gt, 3)
}

/// Like [`joint_errors`] for keypoints with `coords` components each.
pub fn joint_errors_dim(pred: &Tensor, gt: &Tensor, coords: usize) -> Result<JointErrors> {
    if pred.shape() != gt.shape() || pred.rank() != 2 || pred.cols() != NUM_JOINTS * coords {
        return Err(TensorError::ShapeMismatch {
            op: "joint_errors",
            lhs: pred.shape().to_vec(),
            rhs: gt.shape().to_vec(),
        }
        .into());
    }
    let values = pred
        .data()
        .chunks_exact(coords)
        .zip(gt.data().chunks_exact(coords))
        .map(|(p, g)| p.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect();
    JointErrors::new(pred.rows(), NUM_JOINTS, values)
}

fn non_empty(e: &JointErrors) -> Result<()> {
    if e.is_empty() {
        Err(Error::InvalidArgument("no joint errors".into()))
    } else {
        Ok(())
    }
}

pub fn mean_epe(e: &JointErrors) -> Result<f64> {
    non_empty(e)?;
    Ok(e.values.iter().sum::<f64>() / e.values.len() as f64)
}

/// Median over all entries; the average of the two central values for even
/// counts.
pub fn median_epe(e: &JointErrors) -> Result<f64> {
    non_empty(e)?;
    let mut v = e.values.clone();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if let Some(d) = thresholds.iter().find(|d| d.is_nan() || **d < 0.0) {
        return Err(Error::InvalidArgument(format!("threshold {d} must be non-negative")));
    }
    Ok(())
}

/// Fraction of all (frame, joint) entries with error ≤ d, per threshold.
pub fn pck(e: &JointErrors, thresholds: &[f64]) -> Result<Vec<f64>> {
    check_thresholds(thresholds)?;
    non_empty(e)?;
    let mut sorted = e.values.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&d| sorted.partition_point(|&v| v <= d) as f64 / n)
        .collect())
}

/// Fraction of frames whose largest joint error is ≤ d, per threshold.
pub fn pcf(e: &JointErrors, thresholds: &[f64]) -> Result<Vec<f64>> {
    check_thresholds(thresholds)?;
    non_empty(e)?;
    let mut worst: Vec<f64> = (0..e.frames).map(|f| e.frame(f).iter().copied().fold(0.0, f64::max)).collect();
    worst.sort_by(f64::total_cmp);
    let n = worst.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&d| worst.partition_point(|&v| v <= d) as f64 / n)
        .collect())
}

/// `count` evenly spaced thresholds from 0 to `max` inclusive.
pub fn threshold_grid(max: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![max],
        _ => (0..count).map(|i| max * i as f64 / (count - 1) as f64).collect(),
    }
}

/// Two-column CSV: `threshold,value`.
pub fn write_curve(path: &Path, header: &str, thresholds: &[f64], values: &[f64]) -> Result<()> {
    if thresholds.len() != values.len() {
        return Err(Error::InvalidArgument("curve lengths differ".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "threshold,{header}")?;
    for (d, v) in thresholds.iter().zip(values) {
        writeln!(w, "{d:e},{v:e}")?;
    }
    w.flush()?;
    Ok(())
}

/// Summary of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean_epe: f64,
    pub median_epe: f64,
    pub thresholds: Vec<f64>,
    pub pck: Vec<f64>,
    pub pcf: Vec<f64>,
}

pub fn evaluate(e: &JointErrors, thresholds: &[f64]) -> Result<EvalReport> {
    Ok(EvalReport {
        mean_epe: mean_epe(e)?,
        median_epe: median_epe(e)?,
        thresholds: thresholds.to_vec(),
        pck: pck(e, thresholds)?,
        pcf: pcf(e, thresholds)?,
    })
}

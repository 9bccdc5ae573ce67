//! Gaussian posterior machinery: reparameterized sampling, the closed-form KL
//! divergence to N(0, I), the reconstruction term, and their composition into
//! the cross-modal ELBO loss.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Primitive, Tape, Var};
use crate::error::{Result, TensorError};
use crate::hand::Handedness;
use crate::tensor::Tensor;

/// Bounds applied to encoder log-variances.
pub const LOG_VAR_MIN: f64 = -30.0;
pub const LOG_VAR_MAX: f64 = 30.0;

/// Posterior parameters as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mu: Tensor,
    pub log_var: Tensor,
}

impl GaussianParams {
    pub fn new(mu: Tensor, log_var: Tensor) -> std::result::Result<Self, TensorError> {
        crate::tensor::same_shape("gaussian_params", &mu, &log_var)?;
        Ok(Self { mu, log_var })
    }

    pub fn batch(&self) -> usize {
        self.mu.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu.cols()
    }
}

/// Posterior parameters recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVars {
    pub mu: Var,
    pub log_var: Var,
}

impl GaussianVars {
    pub fn values(&self, tape: &Tape) -> GaussianParams {
        GaussianParams {
            mu: tape.value(self.mu).clone(),
            log_var: tape.value(self.log_var).clone(),
        }
    }

    pub fn constant(tape: &mut Tape, g: &GaussianParams) -> Self {
        Self {
            mu: tape.constant(g.mu.clone()),
            log_var: tape.constant(g.log_var.clone()),
        }
    }
}

/// Where the ε of the reparameterization comes from.
pub enum Noise<'a> {
    Draw(&'a mut dyn RngCore),
    /// ε = 0: the posterior-mean path.
    Zero,
    Fixed(Tensor),
}

impl Noise<'_> {
    fn realize(&mut self, shape: &[usize]) -> std::result::Result<Tensor, TensorError> {
        match self {
            Noise::Draw(rng) => Ok(standard_normal(*rng, shape)),
            Noise::Zero => Ok(Tensor::zeros(shape)),
            Noise::Fixed(t) => {
                if t.shape() != shape {
                    return Err(TensorError::ShapeMismatch {
                        op: "reparameterize",
                        lhs: shape.to_vec(),
                        rhs: t.shape().to_vec(),
                    });
                }
                Ok(t.clone())
            }
        }
    }
}

pub fn standard_normal(rng: &mut dyn RngCore, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

#[derive(Debug, Clone)]
pub struct LatentSample {
    pub z: Var,
    pub noise: Tensor,
}

/// `z = µ + exp(½·log σ²) ⊙ ε`; differentiable through µ and log σ² only.
pub fn reparameterize(tape: &mut Tape, g: &GaussianVars, noise: &mut Noise<'_>) -> Result<LatentSample> {
    let eps = noise.realize(tape.value(g.mu).shape())?;
    let half = tape.scale(g.log_var, 0.5)?;
    let sigma = tape.unary(Primitive::Exp, half)?;
    let eps_var = tape.constant(eps.clone());
    let scaled = tape.mul(sigma, eps_var)?;
    let z = tape.add(g.mu, scaled)?;
    Ok(LatentSample { z, noise: eps })
}

/// Σ_d −½(1 + log σ² − µ² − σ²), averaged over the batch.
pub fn kl_standard_normal(tape: &mut Tape, g: &GaussianVars) -> Result<Var> {
    let batch = tape.value(g.mu).rows() as f64;
    let mu_sq = tape.unary(Primitive::Square, g.mu)?;
    let var = tape.unary(Primitive::Exp, g.log_var)?;
    let a = tape.add_scalar(g.log_var, 1.0)?;
    let b = tape.sub(a, mu_sq)?;
    let c = tape.sub(b, var)?;
    let s = tape.unary(Primitive::Sum, c)?;
    Ok(tape.scale(s, -0.5 / batch)?)
}

/// Closed-form KL of plain posterior values, without a tape.
pub fn kl_value(g: &GaussianParams) -> f64 {
    let total: f64 = g
        .mu
        .data()
        .iter()
        .zip(g.log_var.data())
        .map(|(&m, &lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
        .sum();
    total / g.batch() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ReconstructionKind {
    /// Per-sample sum of squared errors.
    #[default]
    SquaredError,
    /// Per-sample Euclidean norm of the error vector.
    EuclideanNorm,
}

/// Per-sample reconstruction error averaged over the batch.
pub fn reconstruction_loss(tape: &mut Tape, x: Var, x_hat: Var, kind: ReconstructionKind) -> Result<Var> {
    let diff = tape.sub(x, x_hat)?;
    let batch = tape.value(x).rows() as f64;
    let sq = tape.unary(Primitive::Square, diff)?;
    let per_sample = match kind {
        ReconstructionKind::SquaredError => sq,
        ReconstructionKind::EuclideanNorm => {
            let rows = tape.unary(Primitive::SumLastAxis, sq)?;
            tape.unary(Primitive::Sqrt, rows)?
        }
    };
    let s = tape.unary(Primitive::Sum, per_sample)?;
    Ok(tape.scale(s, 1.0 / batch)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

/// Weights and sampling options for [`elbo_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kl_weight: f64,
    /// Number of ε draws averaged in the reconstruction expectation.
    pub samples_per_step: usize,
    pub reconstruction: ReconstructionKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kl_weight: 1.0,
            samples_per_step: 1,
            reconstruction: ReconstructionKind::SquaredError,
        }
    }
}

/// Maps data of one modality to posterior parameters on a tape.
pub trait Encode {
    fn encode_on(&self, tape: &mut Tape, x: Var, handedness: Option<&[Handedness]>) -> Result<GaussianVars>;
}

/// Maps latent vectors to data of one modality on a tape.
pub trait Decode {
    fn decode_on(&self, tape: &mut Tape, z: Var) -> Result<Var>;
}

#[derive(Debug, Clone, Copy)]
pub struct ElboOutput {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// encode → reparameterize → decode → reconstruction + β·KL, all on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn elbo_loss(
    tape: &mut Tape,
    x_in: &Tensor,
    handedness: Option<&[Handedness]>,
    x_target: &Tensor,
    encoder: &dyn Encode,
    decoder: &dyn Decode,
    noise: &mut Noise<'_>,
    cfg: &LossConfig,
) -> Result<ElboOutput> {
    if x_in.rows() != x_target.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "elbo_loss",
            lhs: x_in.shape().to_vec(),
            rhs: x_target.shape().to_vec(),
        }
        .into());
    }
    let x = tape.constant(x_in.clone());
    let target = tape.constant(x_target.clone());
    let g = encoder.encode_on(tape, x, handedness)?;
    let k = cfg.samples_per_step.max(1);
    let mut recon: Option<Var> = None;
    for _ in 0..k {
        let s = reparameterize(tape, &g, noise)?;
        let x_hat = decoder.decode_on(tape, s.z)?;
        let r = reconstruction_loss(tape, target, x_hat, cfg.reconstruction)?;
        recon = Some(match recon {
            Some(acc) => tape.add(acc, r)?,
            None => r,
        });
    }
    let mut recon = recon.expect("k >= 1");
    if k > 1 {
        recon = tape.scale(recon, 1.0 / k as f64)?;
    }
    let kl = kl_standard_normal(tape, &g)?;
    let weighted = tape.scale(kl, cfg.kl_weight)?;
    let total = tape.add(recon, weighted)?;
    let breakdown = LossBreakdown {
        reconstruction: tape.value(recon).item(),
        kl: tape.value(kl).item(),
        total: tape.value(total).item(),
    };
    Ok(ElboOutput { total, breakdown })
}

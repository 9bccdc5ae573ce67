//! Central finite-difference gradient checking against the tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::hand::Handedness;
use crate::models::{KeypointDecoder, KeypointEncoder, Modality, ModalitySpec};
use crate::vae::{elbo_loss, standard_normal, LossConfig, Noise, ReconstructionKind};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DENOMINATOR_FLOOR: f64 = 1e-8;

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(DENOMINATOR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest per-parameter relative error `‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)`
    /// over each parameter tensor's analytic and numeric gradients.
    pub max_relative_error: f64,
    pub worst_param: Option<String>,
    /// Largest elementwise relative error. Entries much smaller than
    /// `ulp(loss) / step` are dominated by rounding of the loss itself.
    pub max_entry_error: f64,
    /// Parameter name, flat index, analytic and numeric value of that entry.
    pub worst_entry: Option<(String, usize, f64, f64)>,
    pub loss: f64,
    pub checked: usize,
    /// Entries whose stencil crossed a ReLU or clamp boundary.
    pub skipped: usize,
}

/// Compares the tape gradient of `loss` with central differences for every
/// scalar reachable through `params`. `loss` must be deterministic in the
/// parameter values.
pub fn check_gradients<M>(
    model: &mut M,
    params: impl Fn(&mut M) -> Vec<&mut Parameter>,
    loss: impl Fn(&M, &mut Tape) -> Result<Var>,
    step: f64,
) -> Result<GradCheckReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step {step}")));
    }
    let mut tape = Tape::new();
    let l = loss(model, &mut tape)?;
    let base_pattern = tape.kink_pattern();
    let base_loss = tape.value(l).item();
    let grads = tape.backward(l)?;

    let eval = |model: &M| -> Result<(f64, Vec<i8>)> {
        let mut t = Tape::new();
        let v = loss(model, &mut t)?;
        Ok((t.value(v).item(), t.kink_pattern()))
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: None,
        max_entry_error: 0.0,
        worst_entry: None,
        loss: base_loss,
        checked: 0,
        skipped: 0,
    };
    let count = params(model).len();
    for p in 0..count {
        let (id, name, numel) = {
            let list = params(model);
            (list[p].id(), list[p].name.clone(), list[p].numel())
        };
        let analytic = grads.get(id).cloned();
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for k in 0..numel {
            let original = params(model)[p].value.data()[k];
            params(model)[p].value.data_mut()[k] = original + step;
            let plus = eval(model);
            params(model)[p].value.data_mut()[k] = original - step;
            let minus = eval(model);
            params(model)[p].value.data_mut()[k] = original;
            let ((lp, pp), (lm, pm)) = (plus?, minus?);
            if pp != base_pattern || pm != base_pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * step);
            let a = analytic.as_ref().map_or(0.0, |g| g.data()[k]);
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
            let e = relative_error(a, numeric);
            report.checked += 1;
            if e > report.max_entry_error || report.worst_entry.is_none() {
                report.max_entry_error = e;
                report.worst_entry = Some((name.clone(), k, a, numeric));
            }
        }
        let e = diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(DENOMINATOR_FLOOR);
        if e > report.max_relative_error || report.worst_param.is_none() {
            report.max_relative_error = e;
            report.worst_param = Some(name);
        }
    }
    Ok(report)
}

/// Shape and loss settings of one random encoder → decoder ELBO graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboGraph {
    pub input: Modality,
    pub target: Modality,
    pub handedness_input: bool,
    pub enc_hidden: Vec<usize>,
    pub dec_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub batch: usize,
    pub loss: LossConfig,
}

impl ElboGraph {
    /// Draws hidden widths in `[2, max_width]`, one to three layers per
    /// network, latent widths up to 8 and batch sizes in `[1, max_batch]`.
    pub fn random(rng: &mut ChaCha8Rng, max_width: usize, max_batch: usize) -> Self {
        let modality = |rng: &mut ChaCha8Rng| Modality::ALL[rng.random_range(0..2)];
        let widths = |rng: &mut ChaCha8Rng| -> Vec<usize> {
            let n = rng.random_range(1..=3);
            (0..n).map(|_| rng.random_range(2..=max_width.max(2))).collect()
        };
        let enc_hidden = widths(rng);
        let dec_hidden = widths(rng);
        Self {
            input: modality(rng),
            target: modality(rng),
            handedness_input: rng.random_bool(0.5),
            enc_hidden,
            dec_hidden,
            latent_dim: rng.random_range(1..=8),
            batch: rng.random_range(1..=max_batch.max(1)),
            loss: LossConfig {
                kl_weight: rng.random_range(0.0..2.0),
                samples_per_step: rng.random_range(1..=2),
                reconstruction: if rng.random_bool(0.5) {
                    ReconstructionKind::SquaredError
                } else {
                    ReconstructionKind::EuclideanNorm
                },
            },
        }
    }
}

fn randomize(params: Vec<&mut Parameter>, rng: &mut ChaCha8Rng) {
    for p in params {
        let shape = p.value.shape().to_vec();
        let limit = if shape.len() == 2 {
            (6.0 / (shape[0] + shape[1]) as f64).sqrt()
        } else {
            0.1
        };
        for v in p.value.data_mut() {
            *v = rng.random_range(-limit..=limit);
        }
    }
}

/// Builds the graph described by `g` with uniformly random parameters,
/// inputs, targets and a fixed ε, then checks every parameter gradient.
pub fn check_elbo_graph(g: &ElboGraph, seed: u64, step: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut enc = KeypointEncoder::new(ModalitySpec::new(g.input, g.handedness_input), &g.enc_hidden, g.latent_dim);
    let mut dec = KeypointDecoder::new(ModalitySpec::new(g.target, false), &g.dec_hidden, g.latent_dim);
    randomize(enc.params_mut(), &mut rng);
    randomize(dec.params_mut(), &mut rng);
    let x = standard_normal(&mut rng, &[g.batch, g.input.flat_dim()]);
    let y = standard_normal(&mut rng, &[g.batch, g.target.flat_dim()]);
    let eps = standard_normal(&mut rng, &[g.batch, g.latent_dim]);
    let hand: Option<Vec<Handedness>> = g.handedness_input.then(|| {
        (0..g.batch)
            .map(|_| if rng.random_bool(0.5) { Handedness::Left } else { Handedness::Right })
            .collect()
    });
    let mut pair = (enc, dec);
    check_gradients(
        &mut pair,
        |(e, d)| {
            let mut v = e.params_mut();
            v.extend(d.params_mut());
            v
        },
        |(e, d), tape| {
            let mut noise = Noise::Fixed(eps.clone());
            Ok(elbo_loss(tape, &x, hand.as_deref(), &y, e, d, &mut noise, &g.loss)?.total)
        },
        step,
    )
}

/// `count` random ELBO graphs drawn from `seed`; returns each report.
pub fn check_random_elbo_graphs(
    seed: u64,
    count: usize,
    max_width: usize,
    max_batch: usize,
) -> Result<Vec<(ElboGraph, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let g = ElboGraph::random(&mut rng, max_width, max_batch);
            let r = check_elbo_graph(&g, rng.random(), DEFAULT_STEP)?;
            Ok((g, r))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Primitive;
    use crate::tensor::Tensor;

    struct Quad {
        w: Parameter,
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn quadratic_matches() {
        let mut m = Quad {
            w: Parameter::new("w", Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap()),
        };
        let r = check_gradients(
            &mut m,
            |m| vec![&mut m.w],
            |m, t| {
                let w = t.param(&m.w);
                let sq = t.unary(Primitive::Square, w)?;
                Ok(t.unary(Primitive::Sum, sq)?)
            },
            DEFAULT_STEP,
        )
        .unwrap();
        assert_eq!((r.checked, r.skipped), (3, 0));
        assert!(r.max_relative_error < 1e-9);
    }

    #[test]
    fn kinks_are_skipped() {
        // w = 0 sits on the ReLU boundary; w = 5 is saturated by the clamp.
        let mut m = Quad {
            w: Parameter::new("w", Tensor::new(vec![2], vec![0.0, 5.0]).unwrap()),
        };
        let r = check_gradients(
            &mut m,
            |m| vec![&mut m.w],
            |m, t| {
                let w = t.param(&m.w);
                let r = t.unary(Primitive::Relu, w)?;
                let c = t.clamp(r, -1.0, 1.0)?;
                Ok(t.unary(Primitive::Sum, c)?)
            },
            DEFAULT_STEP,
        )
        .unwrap();
        assert_eq!((r.checked, r.skipped), (1, 1));
        assert_eq!(r.max_relative_error, 0.0);
        assert_eq!(r.max_entry_error, 0.0);
    }

    #[test]
    fn small_elbo_graph() {
        let g = ElboGraph {
            input: Modality::Keypoints2d,
            target: Modality::Joints3d,
            handedness_input: true,
            enc_hidden: vec![6],
            dec_hidden: vec![5, 4],
            latent_dim: 3,
            batch: 2,
            loss: LossConfig::default(),
        };
        let r = check_elbo_graph(&g, 3, DEFAULT_STEP).unwrap();
        assert!(r.checked > 0);
        assert!(r.max_relative_error < 1e-5, "{r:?}");
    }
}

//! Latent-space diagnostics: interpolation walks, axis sweeps, posterior
//! sampling, embedding export and cross-modal alignment.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::ModalData;
use crate::error::{Error, Result};
use crate::hand::Handedness;
use crate::models::{KeypointDecoder, KeypointEncoder, Modality, ModelSet};
use crate::tensor::Tensor;
use crate::vae::{reparameterize, Decode, GaussianVars, Noise};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Interpolation {
    #[default]
    Linear,
    Spherical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkStep {
    pub lambda: f64,
    pub z: Vec<f64>,
    pub outputs: BTreeMap<Modality, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkResult {
    pub steps: Vec<WalkStep>,
}

impl WalkResult {
    pub fn modalities(&self) -> Vec<Modality> {
        self.steps.first().map(|s| s.outputs.keys().copied().collect()).unwrap_or_default()
    }

    /// Largest Euclidean distance between consecutive decoded outputs.
    pub fn max_step_delta(&self, m: Modality) -> f64 {
        self.steps
            .windows(2)
            .filter_map(|w| Some(euclid(w[0].outputs.get(&m)?, w[1].outputs.get(&m)?)))
            .fold(0.0, f64::max)
    }

    /// Largest Euclidean distance between consecutive latent points.
    pub fn max_latent_step(&self) -> f64 {
        self.steps.windows(2).map(|w| euclid(&w[0].z, &w[1].z)).fold(0.0, f64::max)
    }
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn row(x: &[f64]) -> Result<Tensor> {
    Ok(Tensor::new(vec![1, x.len()], x.to_vec())?)
}

/// Posterior mean of a single input vector.
pub fn embed(enc: &KeypointEncoder, x: &[f64], hand: Option<Handedness>) -> Result<Vec<f64>> {
    let h = hand.map(|h| [h]);
    Ok(enc.encode(&row(x)?, h.as_ref().map(|a| &a[..]))?.mu.into_vec())
}

fn hand_for(enc: &KeypointEncoder, hand: Handedness) -> Option<Handedness> {
    enc.spec.handedness_input.then_some(hand)
}

/// Decodes one latent vector with every decoder, one row at a time.
pub fn decode_all(decoders: &[&KeypointDecoder], z: &[f64]) -> Result<BTreeMap<Modality, Vec<f64>>> {
    let zt = row(z)?;
    decoders
        .iter()
        .map(|d| Ok((d.spec.modality, d.decode(&zt)?.into_vec())))
        .collect()
}

/// `steps` equally spaced λ in [0, 1], both ends included.
pub fn lambdas(steps: usize) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!("a walk needs at least 2 steps, got {steps}")));
    }
    Ok((0..steps)
        .map(|i| if i + 1 == steps { 1.0 } else { i as f64 / (steps - 1) as f64 })
        .collect())
}

/// Point at `lambda` between `z1` and `z2`.
pub fn mix(z1: &[f64], z2: &[f64], lambda: f64, mode: Interpolation) -> Vec<f64> {
    match mode {
        Interpolation::Linear => z1.iter().zip(z2).map(|(a, b)| (1.0 - lambda) * a + lambda * b).collect(),
        Interpolation::Spherical => {
            let (n1, n2) = (euclid(z1, &vec![0.0; z1.len()]), euclid(z2, &vec![0.0; z2.len()]));
            let cos = if n1 > 0.0 && n2 > 0.0 {
                (z1.iter().zip(z2).map(|(a, b)| a * b).sum::<f64>() / (n1 * n2)).clamp(-1.0, 1.0)
            } else {
                1.0
            };
            let omega = cos.acos();
            if omega.sin().abs() < 1e-12 {
                return mix(z1, z2, lambda, Interpolation::Linear);
            }
            let a = ((1.0 - lambda) * omega).sin() / omega.sin();
            let b = (lambda * omega).sin() / omega.sin();
            z1.iter().zip(z2).map(|(x, y)| a * x + b * y).collect()
        }
    }
}

/// Embeds two inputs at their posterior means and decodes the path between
/// them with every decoder.
pub fn interpolate(
    enc: &KeypointEncoder,
    decoders: &[&KeypointDecoder],
    (x1, h1): (&[f64], Handedness),
    (x2, h2): (&[f64], Handedness),
    steps: usize,
    mode: Interpolation,
) -> Result<WalkResult> {
    let ls = lambdas(steps)?;
    let z1 = embed(enc, x1, hand_for(enc, h1))?;
    let z2 = embed(enc, x2, hand_for(enc, h2))?;
    let steps = ls
        .into_iter()
        .map(|lambda| {
            let z = mix(&z1, &z2, lambda, mode);
            Ok(WalkStep {
                lambda,
                outputs: decode_all(decoders, &z)?,
                z,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WalkResult { steps })
}

/// Varies latent coordinate `axis` over `values`, the rest held at the
/// posterior mean of `x`. Each step's `lambda` holds the coordinate value.
pub fn axis_sweep(
    enc: &KeypointEncoder,
    decoders: &[&KeypointDecoder],
    x: &[f64],
    hand: Handedness,
    axis: usize,
    values: &[f64],
) -> Result<WalkResult> {
    let base = embed(enc, x, hand_for(enc, hand))?;
    if axis >= base.len() {
        return Err(Error::InvalidArgument(format!("axis {axis} beyond latent dimension {}", base.len())));
    }
    let steps = values
        .iter()
        .map(|&v| {
            let mut z = base.clone();
            z[axis] = v;
            Ok(WalkStep {
                lambda: v,
                outputs: decode_all(decoders, &z)?,
                z,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WalkResult { steps })
}

/// `k` decoded draws z ~ N(µ, σ²) for a batch `x`; each draw is a
/// `[batch × out]` tensor.
pub fn sample_posterior(
    enc: &KeypointEncoder,
    dec: &KeypointDecoder,
    x: &Tensor,
    hand: Option<&[Handedness]>,
    k: usize,
    noise: &mut Noise<'_>,
) -> Result<Vec<Tensor>> {
    if k == 0 {
        return Err(Error::InvalidArgument("at least one posterior sample is required".into()));
    }
    let g = enc.encode(x, hand)?;
    (0..k)
        .map(|_| {
            let mut tape = Tape::new();
            let gv = GaussianVars::constant(&mut tape, &g);
            let s = reparameterize(&mut tape, &gv, noise)?;
            let y = dec.decode_on(&mut tape, s.z)?;
            Ok(tape.value(y).clone())
        })
        .collect()
}

/// Header of the walk CSV for the given decoder modalities.
pub fn walk_header(mods: &[Modality]) -> String {
    let mut h = String::from("lambda");
    for m in mods {
        for i in 0..m.flat_dim() {
            h.push_str(&format!(",x{m}_{i}"));
        }
    }
    h
}

/// One row per step: λ, then the decoded 2D values, then the 3D values
/// (columns only for decoders present).
pub fn write_walk_csv(path: &Path, walk: &WalkResult) -> Result<()> {
    let mods = walk.modalities();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", walk_header(&mods))?;
    for s in &walk.steps {
        write!(w, "{:e}", s.lambda)?;
        for m in &mods {
            for v in &s.outputs[m] {
                write!(w, ",{v:e}")?;
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a walk CSV back into (λ, values) rows.
pub fn read_walk_csv(path: &Path) -> Result<(String, Vec<Vec<f64>>)> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty walk file".into()))??;
    let rows = lines
        .map(|l| {
            l?.split(',')
                .map(|s| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number {s:?}"))))
                .collect()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok((header, rows))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub modality: Modality,
    pub index: usize,
    pub mu: Vec<f64>,
}

/// Posterior means of every sample under every encoder of `models`, one
/// CSV line per (sample, modality), grouped by modality.
pub fn export_embeddings(models: &ModelSet, data: &ModalData, path: &Path) -> Result<usize> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "modality,index")?;
    if !models.encoders.is_empty() {
        for i in 0..models.config.latent_dim {
            write!(w, ",mu{i}")?;
        }
    }
    writeln!(w)?;
    let mut lines = 0;
    for (m, enc) in &models.encoders {
        let mu = enc.encode_mean_batched(data.get(*m), data.hand_input(), 256)?;
        for r in 0..data.len() {
            write!(w, "{m},{}", data.index[r])?;
            for v in mu.row(r) {
                write!(w, ",{v:e}")?;
            }
            writeln!(w)?;
            lines += 1;
        }
    }
    w.flush()?;
    Ok(lines)
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate().skip(1) {
        let line = line?;
        let mut f = line.split(',');
        let bad = || Error::Format(format!("embedding line {}", n + 1));
        let modality = f.next().ok_or_else(bad)?.parse()?;
        let index = f.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let mu = f.map(|s| s.parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
        out.push(EmbeddingRow { modality, index, mu });
    }
    Ok(out)
}

/// Distances between posterior means of the same samples seen through two
/// encoders, against distances between different samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub matched_mean: f64,
    pub matched_std_err: f64,
    pub mismatched_mean: f64,
    pub samples: usize,
}

impl Alignment {
    /// Gap between mismatched and matched means in matched standard errors.
    pub fn margin_in_std_errs(&self) -> f64 {
        (self.mismatched_mean - self.matched_mean) / self.matched_std_err
    }
}

pub fn latent_alignment(models: &ModelSet, a: Modality, b: Modality, data: &ModalData) -> Result<Alignment> {
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidArgument("alignment needs at least 2 samples".into()));
    }
    let za = models.encoder(a)?.encode_mean_batched(data.get(a), data.hand_input(), 256)?;
    let zb = models.encoder(b)?.encode_mean_batched(data.get(b), data.hand_input(), 256)?;
    let matched: Vec<f64> = (0..n).map(|i| euclid(za.row(i), zb.row(i))).collect();
    let mean = matched.iter().sum::<f64>() / n as f64;
    let var = matched.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let mut mism = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                mism += euclid(za.row(i), zb.row(j));
            }
        }
    }
    Ok(Alignment {
        matched_mean: mean,
        matched_std_err: (var / n as f64).sqrt(),
        mismatched_mean: mism / (n * (n - 1)) as f64,
        samples: n,
    })
}

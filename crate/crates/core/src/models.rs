//! Keypoint encoders q(z | x) and decoders p(x | z): stacks of affine + ReLU
//! layers, with two affine heads (µ, log σ²) on the encoder side.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameter, Primitive, Tape, Var};
use crate::error::{Error, Result, TensorError};
use crate::hand::{Handedness, NUM_JOINTS};
use crate::tensor::Tensor;
use crate::vae::{Decode, Encode, GaussianParams, GaussianVars, Noise, LOG_VAR_MAX, LOG_VAR_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Keypoints2d,
    Joints3d,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Keypoints2d, Modality::Joints3d];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Keypoints2d => "2d",
            Modality::Joints3d => "3d",
        }
    }

    pub fn coords(self) -> usize {
        match self {
            Modality::Keypoints2d => 2,
            Modality::Joints3d => 3,
        }
    }

    pub fn flat_dim(self) -> usize {
        NUM_JOINTS * self.coords()
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "2d" => Ok(Modality::Keypoints2d),
            "3d" => Ok(Modality::Joints3d),
            other => Err(Error::InvalidArgument(format!("unknown modality {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub modality: Modality,
    pub flat_dim: usize,
    /// Whether a ±1 handedness feature is appended to encoder inputs.
    pub handedness_input: bool,
}

impl ModalitySpec {
    pub fn new(modality: Modality, handedness_input: bool) -> Self {
        Self {
            modality,
            flat_dim: modality.flat_dim(),
            handedness_input,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// Widths of the hidden affine + ReLU layers.
    pub hidden: Vec<usize>,
    pub handedness_input: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            hidden: vec![512; 5],
            handedness_input: true,
        }
    }
}

/// `x · W + b` with `W: [in × out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    pub fn zeros(name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Parameter::new(format!("{name}.weight"), Tensor::zeros(&[fan_in, fan_out])),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        let xw = tape.matmul(x, w)?;
        Ok(tape.add_bias(xw, b)?)
    }

    /// Glorot-uniform weights scaled by `gain`, zero bias.
    fn init(&mut self, rng: &mut ChaCha8Rng, gain: f64) {
        let limit = (6.0 / (self.fan_in() + self.fan_out()) as f64).sqrt();
        for w in self.weight.value.data_mut() {
            *w = gain * rng.random_range(-limit..=limit);
        }
        self.bias.value.data_mut().fill(0.0);
    }

    fn params(&self) -> [&Parameter; 2] {
        [&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

fn hidden_stack(tape: &mut Tape, layers: &[Linear], mut h: Var) -> Result<Var> {
    for l in layers {
        let a = l.forward(tape, h)?;
        h = tape.unary(Primitive::Relu, a)?;
    }
    Ok(h)
}

fn check_width(tape: &Tape, x: Var, want: usize, op: &'static str) -> Result<()> {
    let t = tape.value(x);
    if t.rank() != 2 || t.cols() != want {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: vec![t.rows(), want],
            rhs: t.shape().to_vec(),
        }
        .into());
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct KeypointEncoder {
    pub spec: ModalitySpec,
    pub hidden: Vec<Linear>,
    pub mu_head: Linear,
    pub log_var_head: Linear,
}

impl KeypointEncoder {
    pub fn new(spec: ModalitySpec, hidden: &[usize], latent_dim: usize) -> Self {
        let prefix = format!("enc.{}", spec.modality);
        let mut fan_in = spec.flat_dim + usize::from(spec.handedness_input);
        let mut layers = Vec::with_capacity(hidden.len());
        for (i, &w) in hidden.iter().enumerate() {
            layers.push(Linear::zeros(&format!("{prefix}.h{i}"), fan_in, w));
            fan_in = w;
        }
        Self {
            spec,
            hidden: layers,
            mu_head: Linear::zeros(&format!("{prefix}.mu"), fan_in, latent_dim),
            log_var_head: Linear::zeros(&format!("{prefix}.logvar"), fan_in, latent_dim),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_head.fan_out()
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut v: Vec<&Parameter> = self.hidden.iter().flat_map(|l| l.params()).collect();
        v.extend(self.mu_head.params());
        v.extend(self.log_var_head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v: Vec<&mut Parameter> = self.hidden.iter_mut().flat_map(|l| l.params_mut()).collect();
        v.extend(self.mu_head.params_mut());
        v.extend(self.log_var_head.params_mut());
        v
    }

    /// Glorot init; the µ and log σ² heads are scaled by 0.01 so training
    /// starts near the prior.
    pub fn init_weights(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut self.hidden {
            l.init(&mut rng, 1.0);
        }
        self.mu_head.init(&mut rng, 0.01);
        self.log_var_head.init(&mut rng, 0.01);
    }

    /// Forward pass without gradient bookkeeping.
    pub fn encode(&self, x: &Tensor, handedness: Option<&[Handedness]>) -> Result<GaussianParams> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let g = self.encode_on(&mut tape, xv, handedness)?;
        Ok(g.values(&tape))
    }

    /// Posterior means in batches, for large inputs.
    pub fn encode_mean_batched(&self, x: &Tensor, handedness: Option<&[Handedness]>, batch: usize) -> Result<Tensor> {
        let n = x.rows();
        let mut data = Vec::with_capacity(n * self.latent_dim());
        for start in (0..n).step_by(batch.max(1)) {
            let idx: Vec<usize> = (start..(start + batch).min(n)).collect();
            let xb = x.select_rows(&idx)?;
            let hb = handedness.map(|h| &h[start..start + idx.len()]);
            data.extend_from_slice(self.encode(&xb, hb)?.mu.data());
        }
        Ok(Tensor::new(vec![n, self.latent_dim()], data)?)
    }
}

impl Encode for KeypointEncoder {
    fn encode_on(&self, tape: &mut Tape, x: Var, handedness: Option<&[Handedness]>) -> Result<GaussianVars> {
        check_width(tape, x, self.spec.flat_dim, "encode")?;
        let input = if self.spec.handedness_input {
            let h = handedness.ok_or_else(|| Error::MissingHandedness(self.spec.modality.to_string()))?;
            let rows = tape.value(x).rows();
            if h.len() != rows {
                return Err(Error::InvalidArgument(format!(
                    "{} handedness flags for {rows} samples",
                    h.len()
                )));
            }
            let col = Tensor::new(vec![rows, 1], h.iter().map(|s| s.sign()).collect())?;
            let c = tape.constant(col);
            tape.concat(&[x, c])?
        } else {
            x
        };
        let h = hidden_stack(tape, &self.hidden, input)?;
        let mu = self.mu_head.forward(tape, h)?;
        let raw = self.log_var_head.forward(tape, h)?;
        let log_var = tape.clamp(raw, LOG_VAR_MIN, LOG_VAR_MAX)?;
        Ok(GaussianVars { mu, log_var })
    }
}

#[derive(Debug, Clone)]
pub struct KeypointDecoder {
    pub spec: ModalitySpec,
    pub hidden: Vec<Linear>,
    pub out: Linear,
}

impl KeypointDecoder {
    pub fn new(spec: ModalitySpec, hidden: &[usize], latent_dim: usize) -> Self {
        let prefix = format!("dec.{}", spec.modality);
        let mut fan_in = latent_dim;
        let mut layers = Vec::with_capacity(hidden.len());
        for (i, &w) in hidden.iter().enumerate() {
            layers.push(Linear::zeros(&format!("{prefix}.h{i}"), fan_in, w));
            fan_in = w;
        }
        Self {
            spec,
            hidden: layers,
            out: Linear::zeros(&format!("{prefix}.out"), fan_in, spec.flat_dim),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.hidden.first().unwrap_or(&self.out).fan_in()
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut v: Vec<&Parameter> = self.hidden.iter().flat_map(|l| l.params()).collect();
        v.extend(self.out.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v: Vec<&mut Parameter> = self.hidden.iter_mut().flat_map(|l| l.params_mut()).collect();
        v.extend(self.out.params_mut());
        v
    }

    pub fn init_weights(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut self.hidden {
            l.init(&mut rng, 1.0);
        }
        self.out.init(&mut rng, 1.0);
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let out = self.decode_on(&mut tape, zv)?;
        Ok(tape.value(out).clone())
    }

    /// Upper bound on the Lipschitz constant of the decoder (Euclidean
    /// norms): the product of per-layer Frobenius norms, ReLU being
    /// 1-Lipschitz.
    pub fn lipschitz_bound(&self) -> f64 {
        self.hidden
            .iter()
            .chain(std::iter::once(&self.out))
            .map(|l| l.weight.value.frobenius_norm())
            .product()
    }
}

impl Decode for KeypointDecoder {
    fn decode_on(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        check_width(tape, z, self.latent_dim(), "decode")?;
        let h = hidden_stack(tape, &self.hidden, z)?;
        self.out.forward(tape, h)
    }
}

/// Number of trainable scalars of an encoder/decoder pair built from `cfg`.
pub fn analytic_param_count(spec: ModalitySpec, cfg: &ModelConfig) -> (usize, usize) {
    let affine = |i: usize, o: usize| i * o + o;
    let mut enc = 0;
    let mut fan_in = spec.flat_dim + usize::from(spec.handedness_input);
    for &w in &cfg.hidden {
        enc += affine(fan_in, w);
        fan_in = w;
    }
    enc += 2 * affine(fan_in, cfg.latent_dim);
    let mut dec = 0;
    let mut fan_in = cfg.latent_dim;
    for &w in &cfg.hidden {
        dec += affine(fan_in, w);
        fan_in = w;
    }
    dec += affine(fan_in, spec.flat_dim);
    (enc, dec)
}

/// One encoder and one decoder per modality; pairs share these instances.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub config: ModelConfig,
    pub encoders: BTreeMap<Modality, KeypointEncoder>,
    pub decoders: BTreeMap<Modality, KeypointDecoder>,
}

impl ModelSet {
    /// Builds and initializes models for `modalities`. Each model draws from
    /// its own seed derived from `seed`.
    pub fn new(config: ModelConfig, modalities: &[Modality], seed: u64) -> Self {
        Self::with_models(config, modalities, modalities, seed)
    }

    /// Encoders for `enc` and decoders for `dec` only. A model's initial
    /// weights depend on its modality and `seed`, not on what else is built.
    pub fn with_models(config: ModelConfig, enc: &[Modality], dec: &[Modality], seed: u64) -> Self {
        let mut encoders = BTreeMap::new();
        let mut decoders = BTreeMap::new();
        for &m in enc {
            let mut e = KeypointEncoder::new(ModalitySpec::new(m, config.handedness_input), &config.hidden, config.latent_dim);
            e.init_weights(derive_seed(seed, 2 * m as u64 + 1));
            encoders.insert(m, e);
        }
        for &m in dec {
            let mut d = KeypointDecoder::new(ModalitySpec::new(m, config.handedness_input), &config.hidden, config.latent_dim);
            d.init_weights(derive_seed(seed, 2 * m as u64 + 2));
            decoders.insert(m, d);
        }
        Self {
            config,
            encoders,
            decoders,
        }
    }

    pub fn encoder(&self, m: Modality) -> Result<&KeypointEncoder> {
        self.encoders
            .get(&m)
            .ok_or_else(|| Error::InvalidArgument(format!("no encoder for modality {m}")))
    }

    pub fn decoder(&self, m: Modality) -> Result<&KeypointDecoder> {
        self.decoders
            .get(&m)
            .ok_or_else(|| Error::InvalidArgument(format!("no decoder for modality {m}")))
    }

    /// Mutable access to the encoder of `enc` and the decoder of `dec` at once.
    pub fn pair_mut(&mut self, enc: Modality, dec: Modality) -> Result<(&mut KeypointEncoder, &mut KeypointDecoder)> {
        let e = self
            .encoders
            .get_mut(&enc)
            .ok_or_else(|| Error::InvalidArgument(format!("no encoder for modality {enc}")))?;
        let d = self
            .decoders
            .get_mut(&dec)
            .ok_or_else(|| Error::InvalidArgument(format!("no decoder for modality {dec}")))?;
        Ok((e, d))
    }

    /// All parameters in a fixed order: encoders then decoders, by modality.
    pub fn params(&self) -> Vec<&Parameter> {
        let mut v: Vec<&Parameter> = self.encoders.values().flat_map(|e| e.params()).collect();
        v.extend(self.decoders.values().flat_map(|d| d.params()));
        v
    }

    pub fn num_scalars(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// Mean-path prediction `decode(µ(encode(x)))` in batches.
    pub fn predict(
        &self,
        input: Modality,
        target: Modality,
        x: &Tensor,
        handedness: Option<&[Handedness]>,
    ) -> Result<Tensor> {
        let enc = self.encoder(input)?;
        let dec = self.decoder(target)?;
        let n = x.rows();
        let mut out = Vec::with_capacity(n * dec.spec.flat_dim);
        const CHUNK: usize = 256;
        for start in (0..n).step_by(CHUNK) {
            let idx: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
            let xb = x.select_rows(&idx)?;
            let hb = handedness.map(|h| &h[start..start + idx.len()]);
            let mut tape = Tape::new();
            let xv = tape.constant(xb);
            let g = enc.encode_on(&mut tape, xv, hb)?;
            let s = crate::vae::reparameterize(&mut tape, &g, &mut Noise::Zero)?;
            let y = dec.decode_on(&mut tape, s.z)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Ok(Tensor::new(vec![n, dec.spec.flat_dim], out)?)
    }
}

/// SplitMix64-style mixing of a master seed with a stream index.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::kl_value;
    use rand_distr::{Distribution, StandardNormal};

    fn small() -> ModelConfig {
        ModelConfig {
            latent_dim: 4,
            hidden: vec![16, 16],
            handedness_input: false,
        }
    }

    fn randn(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
        Tensor::new(vec![rows, cols], data).unwrap()
    }

    #[test]
    fn zero_weights_give_prior() {
        let spec = ModalitySpec::new(Modality::Keypoints2d, false);
        let enc = KeypointEncoder::new(spec, &[8, 8], 3);
        let g = enc.encode(&randn(5, 42, 1), None).unwrap();
        assert!(g.mu.data().iter().all(|&v| v == 0.0));
        assert!(g.log_var.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weights_decoder_outputs_bias() {
        let spec = ModalitySpec::new(Modality::Joints3d, false);
        let mut dec = KeypointDecoder::new(spec, &[8], 3);
        let b: Vec<f64> = (0..63).map(|i| i as f64 * 0.1).collect();
        dec.out.bias.value = Tensor::new(vec![63], b.clone()).unwrap();
        let y = dec.decode(&randn(2, 3, 2)).unwrap();
        assert_eq!(y.row(0), b.as_slice());
        assert_eq!(y.row(1), b.as_slice());
    }

    #[test]
    fn output_shapes() {
        let cfg = ModelConfig {
            latent_dim: 6,
            ..small()
        };
        let set = ModelSet::new(cfg, &Modality::ALL, 3);
        let g = set.encoder(Modality::Keypoints2d).unwrap().encode(&randn(7, 42, 4), None).unwrap();
        assert_eq!(g.mu.shape(), &[7, 6]);
        assert_eq!(g.log_var.shape(), &[7, 6]);
        let y = set.decoder(Modality::Joints3d).unwrap().decode(&randn(5, 6, 5)).unwrap();
        assert_eq!(y.shape(), &[5, 63]);
    }

    #[test]
    fn shape_and_flag_errors() {
        let spec = ModalitySpec::new(Modality::Keypoints2d, true);
        let enc = KeypointEncoder::new(spec, &[8], 3);
        assert!(matches!(enc.encode(&randn(2, 42, 1), None), Err(Error::MissingHandedness(_))));
        assert!(enc.encode(&randn(2, 41, 1), Some(&[Handedness::Left; 2])).is_err());
        let dec = KeypointDecoder::new(ModalitySpec::new(Modality::Joints3d, false), &[8], 3);
        assert!(dec.decode(&randn(2, 4, 1)).is_err());
    }

    #[test]
    fn seeded_init() {
        let a = ModelSet::new(small(), &Modality::ALL, 7);
        let b = ModelSet::new(small(), &Modality::ALL, 7);
        let c = ModelSet::new(small(), &Modality::ALL, 8);
        let vals = |s: &ModelSet| s.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>();
        assert_eq!(vals(&a), vals(&b));
        assert_ne!(vals(&a), vals(&c));
        for p in a.params() {
            if p.name.ends_with(".bias") {
                assert!(p.value.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn init_starts_near_prior() {
        let set = ModelSet::new(ModelConfig::default(), &[Modality::Keypoints2d], 1);
        let enc = set.encoder(Modality::Keypoints2d).unwrap();
        let x = randn(16, 42, 3);
        let g = enc.encode(&x, Some(&[Handedness::Right; 16])).unwrap();
        assert!(kl_value(&g) < 0.1, "{}", kl_value(&g));
    }

    #[test]
    fn parameter_count_is_analytic() {
        let cfg = ModelConfig::default();
        let set = ModelSet::new(cfg.clone(), &Modality::ALL, 1);
        let mut want = 0;
        for m in Modality::ALL {
            let (e, d) = analytic_param_count(ModalitySpec::new(m, true), &cfg);
            want += e + d;
        }
        assert_eq!(set.num_scalars(), want);
        // 2d encoder: 43·512+512 + 4·(512·512+512) + 2·(512·32+32)
        let (e2, _) = analytic_param_count(ModalitySpec::new(Modality::Keypoints2d, true), &cfg);
        assert_eq!(e2, 43 * 512 + 512 + 4 * (512 * 512 + 512) + 2 * (512 * 32 + 32));
    }

    #[test]
    fn handedness_changes_encoding() {
        let cfg = ModelConfig {
            handedness_input: true,
            ..small()
        };
        let set = ModelSet::new(cfg, &[Modality::Keypoints2d], 5);
        let enc = set.encoder(Modality::Keypoints2d).unwrap();
        let x = randn(1, 42, 9);
        let l = enc.encode(&x, Some(&[Handedness::Left])).unwrap();
        let r = enc.encode(&x, Some(&[Handedness::Right])).unwrap();
        assert_ne!(l.mu, r.mu);
    }

    #[test]
    fn decoder_respects_lipschitz_bound() {
        let set = ModelSet::new(small(), &[Modality::Joints3d], 11);
        let dec = set.decoder(Modality::Joints3d).unwrap();
        let l = dec.lipschitz_bound();
        let z1 = randn(50, 4, 1);
        let z2 = randn(50, 4, 2);
        let (y1, y2) = (dec.decode(&z1).unwrap(), dec.decode(&z2).unwrap());
        for i in 0..50 {
            let dy: f64 = y1.row(i).iter().zip(y2.row(i)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let dz: f64 = z1.row(i).iter().zip(z2.row(i)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(dy <= l * dz);
        }
    }
}

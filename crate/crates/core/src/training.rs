//! Cross-modal training over a pair set: variants, semi-supervision,
//! epochs and training history.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::ModalData;
use crate::error::{Error, Result};
use crate::hand::{label_mask, Handedness};
use crate::metrics::{joint_errors_dim, mean_epe, median_epe, JointErrors};
use crate::models::{derive_seed, Modality, ModelConfig, ModelSet};
use crate::optim::{adam_step, AdamConfig};
use crate::vae::{elbo_loss, LossBreakdown, LossConfig, Noise};

/// Stream used for model initialization.
const INIT_STREAM: u64 = 1;
/// Stream used for shuffling and reparameterization noise.
const TRAIN_STREAM: u64 = 2;

/// One (encoder modality, decoder modality) training pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub input: Modality,
    pub target: Modality,
}

impl Pair {
    pub fn new(input: Modality, target: Modality) -> Self {
        Self { input, target }
    }

    pub fn is_autoencoding(self) -> bool {
        self.input == self.target
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.input, self.target)
    }
}

impl FromStr for Pair {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once("->")
            .ok_or_else(|| Error::InvalidArgument(format!("pair {s:?} is not of the form a->b")))?;
        Ok(Pair::new(a.parse()?, b.parse()?))
    }
}

/// Ordered, duplicate-free, non-empty list of pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSet {
    pairs: Vec<Pair>,
}

impl PairSet {
    /// Keeps the first occurrence of repeated pairs.
    pub fn new(pairs: impl IntoIterator<Item = Pair>) -> Result<Self> {
        let mut out: Vec<Pair> = Vec::new();
        for p in pairs {
            if !out.contains(&p) {
                out.push(p);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("pair set is empty".into()));
        }
        Ok(Self { pairs: out })
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn input_modalities(&self) -> Vec<Modality> {
        let mut v: Vec<Modality> = self.pairs.iter().map(|p| p.input).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn target_modalities(&self) -> Vec<Modality> {
        let mut v: Vec<Modality> = self.pairs.iter().map(|p| p.target).collect();
        v.sort();
        v.dedup();
        v
    }
}

impl fmt::Display for PairSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.pairs.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub variant: u8,
    pub input: Modality,
    pub target: Modality,
}

impl VariantConfig {
    pub fn new(variant: u8, input: Modality, target: Modality) -> Self {
        Self { variant, input, target }
    }
}

/// Var.1: (i,t). Var.2: (i,t),(t,t). Var.3: (i,t),(i,i). Var.4: (i,t),(i,i),(t,t).
pub fn build_pairs(v: &VariantConfig) -> Result<PairSet> {
    let (i, t) = (v.input, v.target);
    let main = Pair::new(i, t);
    let pairs = match v.variant {
        1 => vec![main],
        2 => vec![main, Pair::new(t, t)],
        3 => vec![main, Pair::new(i, i)],
        4 => vec![main, Pair::new(i, i), Pair::new(t, t)],
        other => return Err(Error::InvalidArgument(format!("unknown variant {other}"))),
    };
    PairSet::new(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub loss: LossConfig,
    /// One mini-batch per pair per epoch instead of a full pass.
    pub one_batch_per_pair: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
            loss: LossConfig::default(),
            one_batch_per_pair: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(self.loss.kl_weight >= 0.0 && self.loss.kl_weight.is_finite()) {
            return bad("kl weight must be finite and non-negative");
        }
        if self.loss.samples_per_step == 0 {
            return bad("samples per step must be positive");
        }
        Ok(())
    }
}

/// Which rows count as labeled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LabelSource {
    /// The first round(fraction·n) rows of a seeded permutation.
    Fraction { fraction: f64, seed: u64 },
    /// The per-sample flags stored with the data.
    DataFlags,
}

/// Which pairs may consume unlabeled rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum UnlabeledPolicy {
    /// Autoencoding pairs on the input modality use every row.
    #[default]
    InputAutoencoding,
    /// Every pair uses labeled rows only.
    LabeledOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemiSupConfig {
    pub labels: LabelSource,
    pub policy: UnlabeledPolicy,
}

impl SemiSupConfig {
    pub fn fraction(fraction: f64, seed: u64) -> Self {
        Self {
            labels: LabelSource::Fraction { fraction, seed },
            policy: UnlabeledPolicy::InputAutoencoding,
        }
    }

    pub fn labeled_mask(&self, data: &ModalData) -> Result<Vec<bool>> {
        match self.labels {
            LabelSource::Fraction { fraction, seed } => label_mask(data.len(), fraction, seed),
            LabelSource::DataFlags => Ok(data.labeled.clone()),
        }
    }
}

/// The rows a pair trains on.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRows {
    pub pair: Pair,
    pub rows: Vec<usize>,
}

/// Rows per pair. Without `semi` every pair sees all rows. With it, only
/// autoencoding pairs on the variant input (under the default policy) see
/// unlabeled rows; everything touching the target modality is restricted to
/// labeled rows.
pub fn plan_rows(pairs: &PairSet, input: Modality, data: &ModalData, semi: Option<&SemiSupConfig>) -> Result<Vec<PairRows>> {
    let all: Vec<usize> = (0..data.len()).collect();
    let labeled = match semi {
        Some(s) => {
            let mask = s.labeled_mask(data)?;
            (0..data.len()).filter(|&i| mask[i]).collect()
        }
        None => all.clone(),
    };
    pairs
        .pairs()
        .iter()
        .map(|&pair| {
            let unlabeled_ok = semi.is_none_or(|s| {
                s.policy == UnlabeledPolicy::InputAutoencoding && pair.is_autoencoding() && pair.input == input
            });
            let rows = if unlabeled_ok { all.clone() } else { labeled.clone() };
            if rows.is_empty() {
                return Err(Error::InvalidArgument(format!("pair {pair} has no training rows")));
            }
            Ok(PairRows { pair, rows })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairReport {
    pub pair: Pair,
    /// Mean over samples of the per-batch losses.
    pub loss: LossBreakdown,
    pub samples: usize,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub pairs: Vec<PairReport>,
}

fn gather_hand(data: &ModalData, idx: &[usize]) -> Option<Vec<Handedness>> {
    data.hand_input().map(|h| idx.iter().map(|&i| h[i]).collect())
}

/// One ELBO step for `pair` on rows `idx`: forward, backward, ADAM on the
/// pair's encoder and decoder only.
pub fn train_step(
    models: &mut ModelSet,
    pair: Pair,
    data: &ModalData,
    idx: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown> {
    let x_in = data.get(pair.input).select_rows(idx)?;
    let x_target = data.get(pair.target).select_rows(idx)?;
    let hand = gather_hand(data, idx);
    let (enc, dec) = models.pair_mut(pair.input, pair.target)?;
    let mut tape = Tape::new();
    let out = elbo_loss(
        &mut tape,
        &x_in,
        hand.as_deref(),
        &x_target,
        &*enc,
        &*dec,
        &mut Noise::Draw(rng),
        &cfg.loss,
    )?;
    let grads = tape.backward(out.total)?;
    for p in enc.params_mut().into_iter().chain(dec.params_mut()) {
        p.accumulate(&grads);
    }
    adam_step(enc.params_mut().into_iter().chain(dec.params_mut()), &cfg.adam);
    Ok(out.breakdown)
}

/// Pairs in order; for each, one shuffled pass over its rows in mini-batches
/// (or a single batch in one-batch mode). Aborts on a non-finite loss.
pub fn train_epoch(
    models: &mut ModelSet,
    plan: &[PairRows],
    data: &ModalData,
    cfg: &TrainConfig,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpochReport> {
    let mut reports = Vec::with_capacity(plan.len());
    for pr in plan {
        if pr.rows.is_empty() {
            return Err(Error::InvalidArgument(format!("empty batch for pair {}", pr.pair)));
        }
        let mut order = pr.rows.clone();
        order.shuffle(rng);
        if cfg.one_batch_per_pair {
            order.truncate(cfg.batch_size);
        }
        let mut acc = LossBreakdown::default();
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let l = train_step(models, pr.pair, data, idx, cfg, rng)?;
            if !(l.total.is_finite() && l.reconstruction.is_finite() && l.kl.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    pair: pr.pair.to_string(),
                    epoch,
                });
            }
            let w = idx.len() as f64;
            acc.reconstruction += w * l.reconstruction;
            acc.kl += w * l.kl;
            acc.total += w * l.total;
            batches += 1;
        }
        let n = order.len() as f64;
        reports.push(PairReport {
            pair: pr.pair,
            loss: LossBreakdown {
                reconstruction: acc.reconstruction / n,
                kl: acc.kl / n,
                total: acc.total / n,
            },
            samples: order.len(),
            batches,
        });
    }
    Ok(EpochReport { epoch, pairs: reports })
}

/// Mean-path prediction errors of `pair` on `data`, in target coordinates.
pub fn pair_errors(models: &ModelSet, pair: Pair, data: &ModalData) -> Result<JointErrors> {
    let pred = models.predict(pair.input, pair.target, data.get(pair.input), data.hand_input())?;
    joint_errors_dim(&pred, data.get(pair.target), pair.target.coords())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub pair: Pair,
    pub loss: LossBreakdown,
    pub heldout_mean_epe: Option<f64>,
    pub heldout_median_epe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

pub const HISTORY_HEADER: &str = "epoch\tpair\treconstruction\tkl\ttotal\theldout_mean_epe\theldout_median_epe";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:e}"))
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s == "-" {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Format(format!("bad number {s:?} in history")))
}

impl History {
    pub fn last_for(&self, pair: Pair) -> Option<&HistoryRow> {
        self.rows.iter().rev().find(|r| r.pair == pair)
    }

    pub fn first_for(&self, pair: Pair) -> Option<&HistoryRow> {
        self.rows.iter().find(|r| r.pair == pair)
    }

    pub fn write_tsv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{HISTORY_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{}\t{}\t{:e}\t{:e}\t{:e}\t{}\t{}",
                r.epoch,
                r.pair,
                r.loss.reconstruction,
                r.loss.kl,
                r.loss.total,
                fmt_opt(r.heldout_mean_epe),
                fmt_opt(r.heldout_median_epe)
            )?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_tsv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let mut lines = r.lines();
        if lines.next().transpose()?.as_deref() != Some(HISTORY_HEADER) {
            return Err(Error::Format("missing history header".into()));
        }
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(Error::Format(format!("history line has {} fields", f.len())));
            }
            let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Format(format!("bad number {s:?}"))) };
            rows.push(HistoryRow {
                epoch: f[0].parse().map_err(|_| Error::Format(format!("bad epoch {:?}", f[0])))?,
                pair: f[1].parse().map_err(|e: Error| Error::Format(e.to_string()))?,
                loss: LossBreakdown {
                    reconstruction: num(f[2])?,
                    kl: num(f[3])?,
                    total: num(f[4])?,
                },
                heldout_mean_epe: parse_opt(f[5])?,
                heldout_median_epe: parse_opt(f[6])?,
            });
        }
        Ok(Self { rows })
    }
}

/// Runs `cfg.epochs` epochs on existing models, evaluating every pair on
/// `heldout` after each epoch. `progress` sees every history row as it is
/// produced.
#[allow(clippy::too_many_arguments)]
pub fn train_models(
    models: &mut ModelSet,
    pairs: &PairSet,
    input: Modality,
    data: &ModalData,
    heldout: Option<&ModalData>,
    cfg: &TrainConfig,
    semi: Option<&SemiSupConfig>,
    mut progress: Option<&mut dyn FnMut(&HistoryRow)>,
) -> Result<History> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training data is empty".into()));
    }
    let plan = plan_rows(pairs, input, data, semi)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TRAIN_STREAM));
    let mut history = History::default();
    for epoch in 1..=cfg.epochs {
        let report = train_epoch(models, &plan, data, cfg, epoch, &mut rng)?;
        for pr in report.pairs {
            let (mean, median) = match heldout {
                Some(h) => {
                    let e = pair_errors(models, pr.pair, h)?;
                    (Some(mean_epe(&e)?), Some(median_epe(&e)?))
                }
                None => (None, None),
            };
            let row = HistoryRow {
                epoch,
                pair: pr.pair,
                loss: pr.loss,
                heldout_mean_epe: mean,
                heldout_median_epe: median,
            };
            if let Some(f) = progress.as_mut() {
                f(&row);
            }
            history.rows.push(row);
        }
    }
    Ok(history)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub models: ModelSet,
    pub pairs: PairSet,
    pub history: History,
}

/// Builds the variant's pair set, initializes its models from `cfg.seed`
/// and trains them.
pub fn train(
    model_cfg: &ModelConfig,
    v: &VariantConfig,
    data: &ModalData,
    heldout: Option<&ModalData>,
    cfg: &TrainConfig,
    semi: Option<&SemiSupConfig>,
    progress: Option<&mut dyn FnMut(&HistoryRow)>,
) -> Result<TrainOutcome> {
    let pairs = build_pairs(v)?;
    if model_cfg.handedness_input != data.feed_handedness {
        return Err(Error::InvalidArgument(
            "model handedness input does not match the preprocessing mode".into(),
        ));
    }
    let mut models = ModelSet::with_models(
        model_cfg.clone(),
        &pairs.input_modalities(),
        &pairs.target_modalities(),
        derive_seed(cfg.seed, INIT_STREAM),
    );
    let history = train_models(&mut models, &pairs, v.input, data, heldout, cfg, semi, progress)?;
    Ok(TrainOutcome { models, pairs, history })
}

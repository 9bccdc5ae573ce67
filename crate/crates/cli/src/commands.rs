//! The six subcommands. Each writes its resolved configuration and all
//! outputs under `out_dir` and returns a short summary for stdout.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use xmvae_core::checkpoint;
use xmvae_core::experiments::{semisup_sweep, variant_table, write_semisup_csv};
use xmvae_core::hand::io::{read_dataset, write_dataset};
use xmvae_core::hand::{augment, generate_dataset, Camera, HandSkeleton, PoseSample};
use xmvae_core::latent::{export_embeddings, interpolate, latent_alignment, write_walk_csv, Interpolation};
use xmvae_core::metrics::{evaluate, threshold_grid, write_curve};
use xmvae_core::models::derive_seed;
use xmvae_core::training::{pair_errors, train, HistoryRow, LabelSource, UnlabeledPolicy};
use xmvae_core::{
    AdamConfig, Error, HandednessMode, LossConfig, ModalData, Modality, ModelConfig, Pair, PreprocessConfig,
    ReconstructionKind, Result, SemiSupConfig, TrainConfig, VariantConfig,
};

use crate::config::{Command, RunConfig};
use crate::svg::walk_svg;

pub const RESOLVED: &str = "resolved.cfg";
const AUGMENT_STREAM: u64 = 3;

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(RESOLVED), cfg.render())?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn preprocess(cfg: &RunConfig) -> Result<PreprocessConfig> {
    Ok(PreprocessConfig {
        norm2d: cfg.get("norm2d")?,
        norm3d: cfg.get("norm3d")?,
        handedness: cfg.get::<HandednessMode>("handedness")?,
        wrist_to_palm: cfg.flag("wrist_to_palm")?,
    })
}

fn model_config(cfg: &RunConfig, pre: &PreprocessConfig) -> Result<ModelConfig> {
    let latent_dim: usize = cfg.get("latent_dim")?;
    let hidden: Vec<usize> = cfg.list("hidden")?;
    if latent_dim == 0 || hidden.contains(&0) {
        return Err(Error::InvalidArgument("layer widths must be positive".into()));
    }
    Ok(ModelConfig {
        latent_dim,
        hidden,
        handedness_input: pre.handedness.model_input(),
    })
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig> {
    let reconstruction = match cfg.str("reconstruction") {
        "squared" => ReconstructionKind::SquaredError,
        "euclidean" => ReconstructionKind::EuclideanNorm,
        other => {
            return Err(Error::InvalidArgument(format!(
                "reconstruction = {other:?}; expected squared or euclidean"
            )))
        }
    };
    let c = TrainConfig {
        epochs: cfg.get("epochs")?,
        batch_size: cfg.get("batch")?,
        adam: AdamConfig {
            lr: cfg.get("lr")?,
            beta1: cfg.get("beta1")?,
            beta2: cfg.get("beta2")?,
            eps: cfg.get("eps")?,
        },
        seed: cfg.get("seed")?,
        loss: LossConfig {
            kl_weight: cfg.get("kl_weight")?,
            samples_per_step: cfg.get("samples_per_step")?,
            reconstruction,
        },
        one_batch_per_pair: cfg.flag("one_batch")?,
    };
    c.validate()?;
    Ok(c)
}

fn task(cfg: &RunConfig) -> Result<Pair> {
    Ok(Pair::new(cfg.get("input")?, cfg.get("target")?))
}

/// Training and held-out data. Held-out rows come from `heldout` when set,
/// otherwise from the last `holdout` samples of the dataset. Augmented
/// copies are appended to the training rows only.
fn load_data(cfg: &RunConfig, pre: &PreprocessConfig) -> Result<(ModalData, Option<ModalData>)> {
    let mut samples = read_dataset(&cfg.path("dataset"))?;
    let holdout: usize = cfg.get("holdout")?;
    let heldout_path = cfg.str("heldout");
    let held: Option<Vec<PoseSample>> = if !heldout_path.is_empty() {
        Some(read_dataset(Path::new(heldout_path))?)
    } else if holdout > 0 {
        if holdout >= samples.len() {
            return Err(Error::InvalidArgument(format!(
                "holdout {holdout} leaves no training samples out of {}",
                samples.len()
            )));
        }
        Some(samples.split_off(samples.len() - holdout))
    } else {
        None
    };
    let copies: usize = cfg.get("augment_copies")?;
    if copies > 0 {
        let seed: u64 = cfg.get("seed")?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, AUGMENT_STREAM));
        let cam = Camera::default();
        let base = samples.clone();
        for _ in 0..copies {
            samples.extend(base.iter().map(|s| augment(s, &cam, &mut rng)));
        }
    }
    let train = ModalData::build(&samples, pre)?;
    let held = held.map(|h| ModalData::build(&h, pre)).transpose()?;
    Ok((train, held))
}

fn require_heldout(h: Option<ModalData>) -> Result<ModalData> {
    h.ok_or_else(|| Error::InvalidArgument("this command needs held-out data: set heldout or holdout".into()))
}

fn progress_line(label: &str, r: &HistoryRow) {
    let epe = r
        .heldout_mean_epe
        .map_or(String::new(), |m| format!(" held-out mean EPE {m:.4}"));
    eprintln!(
        "{label}epoch {} {}: reconstruction {:.4} kl {:.4}{epe}",
        r.epoch, r.pair, r.loss.reconstruction, r.loss.kl
    );
}

pub fn generate(cfg: &RunConfig) -> Result<String> {
    let n: usize = cfg.get("n")?;
    let seed: u64 = cfg.get("seed")?;
    let fraction: f64 = cfg.get("label_fraction")?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let samples = generate_dataset(&HandSkeleton::canonical(), &Camera::default(), n, seed, fraction)?;
    let dir = prepare_out(cfg)?;
    let path = dir.join("dataset.jsonl");
    write_dataset(&path, &samples)?;
    let labeled = samples.iter().filter(|s| s.labeled).count();
    let left = samples.iter().filter(|s| s.handedness == xmvae_core::hand::Handedness::Left).count();
    Ok(format!(
        "wrote {n} samples ({labeled} labeled, {left} left hands) to {}",
        path.display()
    ))
}

pub fn train_cmd(cfg: &RunConfig) -> Result<String> {
    let pre = preprocess(cfg)?;
    let model_cfg = model_config(cfg, &pre)?;
    let tc = train_config(cfg)?;
    let t = task(cfg)?;
    let variant: u8 = cfg.get("variant")?;
    let policy = match cfg.str("unlabeled_policy") {
        "input-autoencoding" => UnlabeledPolicy::InputAutoencoding,
        "labeled-only" => UnlabeledPolicy::LabeledOnly,
        other => return Err(Error::InvalidArgument(format!("unlabeled_policy = {other:?}"))),
    };
    let semi = match cfg.str("label_source") {
        "none" => None,
        "fraction" => Some(SemiSupConfig {
            labels: LabelSource::Fraction {
                fraction: cfg.get("label_fraction")?,
                seed: tc.seed,
            },
            policy,
        }),
        "data" => Some(SemiSupConfig {
            labels: LabelSource::DataFlags,
            policy,
        }),
        other => return Err(Error::InvalidArgument(format!("label_source = {other:?}"))),
    };
    let (data, held) = load_data(cfg, &pre)?;
    let dir = prepare_out(cfg)?;
    let mut report = |r: &HistoryRow| progress_line("", r);
    let out = train(
        &model_cfg,
        &VariantConfig::new(variant, t.input, t.target),
        &data,
        held.as_ref(),
        &tc,
        semi.as_ref(),
        Some(&mut report),
    )?;
    checkpoint::save(&out.models, &dir.join("model.ckpt"))?;
    out.history.save(&dir.join("history.tsv"))?;
    let last = out.history.last_for(t);
    let epe = last
        .and_then(|r| r.heldout_mean_epe.zip(r.heldout_median_epe))
        .map_or(String::new(), |(m, md)| format!("; held-out {t} mean EPE {m:.4}, median {md:.4}"));
    Ok(format!(
        "trained Var.{variant} ({}) for {} epochs on {} samples{epe}",
        out.pairs, tc.epochs, data.len()
    ))
}

pub fn eval(cfg: &RunConfig) -> Result<String> {
    let pre = preprocess(cfg)?;
    let models = checkpoint::load(&cfg.path("checkpoint"))?;
    let samples = read_dataset(&cfg.path("dataset"))?;
    let data = ModalData::build(&samples, &pre)?;
    if data.feed_handedness != models.config.handedness_input {
        return Err(Error::InvalidArgument(
            "checkpoint handedness input does not match the handedness mode".into(),
        ));
    }
    let t = task(cfg)?;
    let max: f64 = cfg.get("threshold_max")?;
    let count: usize = cfg.get("threshold_count")?;
    let mm: f64 = cfg.get("mm_per_unit")?;
    if !(max >= 0.0 && max.is_finite()) || count == 0 || !(mm > 0.0 && mm.is_finite()) {
        return Err(Error::InvalidArgument(
            "threshold_max must be finite and non-negative, threshold_count and mm_per_unit positive".into(),
        ));
    }
    let e = pair_errors(&models, t, &data)?;
    let report = evaluate(&e, &threshold_grid(max, count))?;
    let dir = prepare_out(cfg)?;
    let mut w = create(&dir.join("metrics.txt"))?;
    writeln!(w, "task = {t}")?;
    writeln!(w, "frames = {}", e.frames)?;
    writeln!(w, "mean_epe = {:e}", report.mean_epe)?;
    writeln!(w, "median_epe = {:e}", report.median_epe)?;
    writeln!(w, "mm_per_unit = {mm}")?;
    writeln!(w, "mean_epe_mm = {:e}", report.mean_epe * mm)?;
    writeln!(w, "median_epe_mm = {:e}", report.median_epe * mm)?;
    w.flush()?;
    write_curve(&dir.join("pck.csv"), "pck", &report.thresholds, &report.pck)?;
    write_curve(&dir.join("pcf.csv"), "pcf", &report.thresholds, &report.pcf)?;
    Ok(format!(
        "{t} on {} frames: mean EPE {:.4} ({:.2} mm), median EPE {:.4} ({:.2} mm)",
        e.frames,
        report.mean_epe,
        report.mean_epe * mm,
        report.median_epe,
        report.median_epe * mm
    ))
}

pub fn variants(cfg: &RunConfig) -> Result<String> {
    let pre = preprocess(cfg)?;
    let model_cfg = model_config(cfg, &pre)?;
    let tc = train_config(cfg)?;
    let t = task(cfg)?;
    let (data, held) = load_data(cfg, &pre)?;
    let held = require_heldout(held)?;
    let dir = prepare_out(cfg)?;
    let tasks = [t, Pair::new(t.target, t.target)];
    let mut report = |label: &str, r: &HistoryRow| progress_line(&format!("{label}: "), r);
    let table = variant_table(&model_cfg, &tasks, &data, &held, &tc, Some(&mut report))?;
    let mut w = create(&dir.join("variants.csv"))?;
    table.write_csv(&mut w)?;
    w.flush()?;
    for (i, o) in table.outcomes.iter().enumerate() {
        let run = table.runs.iter().find(|r| r.outcome == i).expect("every outcome has a run");
        let name = format!("history_var{}_{}_to_{}.tsv", run.variant, run.task.input, run.task.target);
        o.history.save(&dir.join(name))?;
    }
    let mut summary = format!("variant table over {} training samples", data.len());
    if t.input != t.target {
        if let Some(o) = table.outcome(4, t) {
            let a = latent_alignment(&o.models, t.input, t.target, &held)?;
            let mut w = create(&dir.join("alignment.txt"))?;
            writeln!(w, "samples = {}", a.samples)?;
            writeln!(w, "matched_mean = {:e}", a.matched_mean)?;
            writeln!(w, "matched_std_err = {:e}", a.matched_std_err)?;
            writeln!(w, "mismatched_mean = {:e}", a.mismatched_mean)?;
            writeln!(w, "margin_in_std_errs = {:e}", a.margin_in_std_errs())?;
            w.flush()?;
        }
    }
    for task in &tasks {
        if let Some(s) = table.spread(*task) {
            summary.push_str(&format!("; {task} max/min mean EPE {s:.3}"));
        }
    }
    Ok(summary)
}

pub fn semisup(cfg: &RunConfig) -> Result<String> {
    let pre = preprocess(cfg)?;
    let model_cfg = model_config(cfg, &pre)?;
    let tc = train_config(cfg)?;
    let t = task(cfg)?;
    let fractions: Vec<f64> = cfg.list("fractions")?;
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::InvalidArgument("fractions must be a non-empty list in (0, 1]".into()));
    }
    let (data, held) = load_data(cfg, &pre)?;
    let held = require_heldout(held)?;
    let dir = prepare_out(cfg)?;
    let mut report = |label: &str, r: &HistoryRow| progress_line(&format!("{label}: "), r);
    let rows = semisup_sweep(&model_cfg, t, &fractions, &data, &held, &tc, Some(&mut report))?;
    let mut w = create(&dir.join("semisup.csv"))?;
    write_semisup_csv(&mut w, &rows)?;
    w.flush()?;
    let parts: Vec<String> = rows
        .iter()
        .map(|r| format!("{}: {:.3}", r.fraction, r.improvement_ratio()))
        .collect();
    Ok(format!("Var.1/Var.3 median EPE ratio by label fraction: {}", parts.join(", ")))
}

pub fn walk(cfg: &RunConfig) -> Result<String> {
    let pre = preprocess(cfg)?;
    let models = checkpoint::load(&cfg.path("checkpoint"))?;
    let samples = read_dataset(&cfg.path("dataset"))?;
    let data = ModalData::build(&samples, &pre)?;
    let input: Modality = cfg.get("input")?;
    let enc = models.encoder(input)?;
    if data.feed_handedness != enc.spec.handedness_input {
        return Err(Error::InvalidArgument(
            "checkpoint handedness input does not match the handedness mode".into(),
        ));
    }
    let idx: Vec<usize> = cfg.list("indices")?;
    if idx.len() != 2 {
        return Err(Error::InvalidArgument("indices must name exactly two samples".into()));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= data.len()) {
        return Err(Error::InvalidArgument(format!(
            "sample index {bad} out of range for {} samples",
            data.len()
        )));
    }
    let steps: usize = cfg.get("steps")?;
    let mode = match cfg.str("interpolation") {
        "linear" => Interpolation::Linear,
        "spherical" => Interpolation::Spherical,
        other => return Err(Error::InvalidArgument(format!("interpolation = {other:?}"))),
    };
    let embeddings: usize = cfg.get("embeddings")?;
    let decoders: Vec<_> = models.decoders.values().collect();
    if decoders.is_empty() {
        return Err(Error::InvalidArgument("checkpoint has no decoder".into()));
    }
    let x = data.get(input);
    let walk = interpolate(
        enc,
        &decoders,
        (x.row(idx[0]), data.handedness[idx[0]]),
        (x.row(idx[1]), data.handedness[idx[1]]),
        steps,
        mode,
    )?;
    let dir = prepare_out(cfg)?;
    write_walk_csv(&dir.join("walk.csv"), &walk)?;
    let mut extra = String::new();
    if cfg.flag("svg")? {
        fs::write(dir.join("walk.svg"), walk_svg(&walk)?)?;
        extra.push_str(", walk.svg");
    }
    if embeddings > 0 {
        let rows: Vec<usize> = (0..embeddings.min(data.len())).collect();
        let n = export_embeddings(&models, &data.select(&rows)?, &dir.join("embeddings.csv"))?;
        extra.push_str(&format!(", embeddings.csv ({n} lines)"));
    }
    Ok(format!(
        "walked {steps} steps between samples {} and {}; wrote walk.csv{extra}",
        idx[0], idx[1]
    ))
}

pub fn dispatch(cfg: &RunConfig) -> Result<String> {
    match cfg.command {
        Command::Generate => generate(cfg),
        Command::Train => train_cmd(cfg),
        Command::Eval => eval(cfg),
        Command::Variants => variants(cfg),
        Command::Semisup => semisup(cfg),
        Command::Walk => walk(cfg),
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion, failing the test
//! target when any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use xmvae_core::baseline::LinearRegressor;
use xmvae_core::experiments::score;
use xmvae_core::gradcheck::check_random_elbo_graphs;
use xmvae_core::hand::skeleton::parent;
use xmvae_core::hand::{
    augment_with, generate_dataset, normalize_pose, project, Camera, HandSkeleton, NormFlags, PoseSample, NUM_JOINTS,
};
use xmvae_core::latent::{decode_all, embed, euclid, interpolate, latent_alignment, Interpolation};
use xmvae_core::metrics::{joint_errors, joint_errors_dim, mean_epe, median_epe, pcf, pck};
use xmvae_core::training::{train, TrainOutcome};
use xmvae_core::vae::kl_value;
use xmvae_core::{GaussianParams, ModalData, Modality, ModelConfig, Pair, PreprocessConfig, Result, Tensor, TrainConfig, VariantConfig};

const TWO_D: Modality = Modality::Keypoints2d;
const THREE_D: Modality = Modality::Joints3d;
const LIFT: Pair = Pair {
    input: TWO_D,
    target: THREE_D,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn within(limit_s: u64, t: Duration) -> bool {
    t <= Duration::from_secs(limit_s)
}

fn c1_gradients() -> Result<Verdict> {
    let start = Instant::now();
    let reports = check_random_elbo_graphs(2024, 50, 64, 8)?;
    let t = start.elapsed();
    let worst = reports
        .iter()
        .map(|(_, r)| r.max_relative_error)
        .fold(0.0, f64::max);
    let checked: usize = reports.iter().map(|(_, r)| r.checked).sum();
    let skipped: usize = reports.iter().map(|(_, r)| r.skipped).sum();
    Ok(verdict(
        worst < 1e-5 && checked > 0 && within(60, t),
        format!("50 graphs, max relative error {worst:.2e} ({checked} entries checked, {skipped} kink-straddling skipped), {t:.1?}"),
    ))
}

/// Monte Carlo KL(q ‖ N(0, I)) as the batch mean of E_q[log q(z) − log p(z)].
fn monte_carlo_kl(mu: &[f64], log_var: &[f64], rows: usize, draws: usize, rng: &mut ChaCha8Rng) -> f64 {
    let cols = mu.len() / rows;
    let mut total = 0.0;
    for r in 0..rows {
        let mut acc = 0.0;
        for _ in 0..draws {
            let mut log_ratio = 0.0;
            for c in 0..cols {
                let (m, lv) = (mu[r * cols + c], log_var[r * cols + c]);
                let e: f64 = StandardNormal.sample(rng);
                let z = m + (0.5 * lv).exp() * e;
                // log q − log p; the 2π terms cancel.
                log_ratio += -0.5 * lv - 0.5 * e * e + 0.5 * z * z;
            }
            acc += log_ratio;
        }
        total += acc / draws as f64;
    }
    total / rows as f64
}

fn c2_kl() -> Result<Verdict> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let cols = rng.random_range(2..=6);
        let mu: Vec<f64> = (0..cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lv: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.5..1.0)).collect();
        let g = GaussianParams::new(
            Tensor::new(vec![1, cols], mu.clone())?,
            Tensor::new(vec![1, cols], lv.clone())?,
        )?;
        let exact = kl_value(&g);
        let mc = monte_carlo_kl(&mu, &lv, 1, 1_000_000, &mut rng);
        worst = worst.max((mc - exact).abs() / exact.abs());
    }
    let t = start.elapsed();
    Ok(verdict(
        worst < 0.01 && within(30, t),
        format!("20 posteriors, worst relative gap to 1e6-sample Monte Carlo {worst:.2e}, {t:.1?}"),
    ))
}

fn scalar_reference(pred: &[f64], gt: &[f64], coords: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < pred.len() {
        let mut s = 0.0;
        for c in 0..coords {
            let d = pred[i + c] - gt[i + c];
            s += d * d;
        }
        out.push(s.sqrt());
        i += coords;
    }
    out
}

fn c3_metrics() -> Result<Verdict> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    let mut ordered = true;
    for k in 0..100 {
        let coords = if k % 2 == 0 { 3 } else { 2 };
        let frames = rng.random_range(1..=12);
        let n = frames * NUM_JOINTS * coords;
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let pt = Tensor::new(vec![frames, NUM_JOINTS * coords], p.clone())?;
        let gt = Tensor::new(vec![frames, NUM_JOINTS * coords], g.clone())?;
        let e = if coords == 3 {
            joint_errors(&pt, &gt)?
        } else {
            joint_errors_dim(&pt, &gt, 2)?
        };
        let r = scalar_reference(&p, &g, coords);
        for (a, b) in e.values.iter().zip(&r) {
            worst = worst.max((a - b).abs());
        }
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let mut s = r.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if s.len() % 2 == 1 {
            s[s.len() / 2]
        } else {
            (s[s.len() / 2 - 1] + s[s.len() / 2]) / 2.0
        };
        worst = worst.max((mean_epe(&e)? - mean).abs());
        worst = worst.max((median_epe(&e)? - median).abs());
        let thresholds: Vec<f64> = (0..15).map(|i| i as f64 * 0.25).collect();
        let (k_curve, f_curve) = (pck(&e, &thresholds)?, pcf(&e, &thresholds)?);
        for (i, &d) in thresholds.iter().enumerate() {
            let hits = r.iter().filter(|&&v| v <= d).count() as f64 / r.len() as f64;
            let mut good = 0;
            for f in 0..frames {
                if r[f * NUM_JOINTS..(f + 1) * NUM_JOINTS].iter().all(|&v| v <= d) {
                    good += 1;
                }
            }
            worst = worst.max((k_curve[i] - hits).abs());
            worst = worst.max((f_curve[i] - good as f64 / frames as f64).abs());
            ordered &= f_curve[i] <= k_curve[i];
        }
    }
    let t = start.elapsed();
    Ok(verdict(
        worst <= 1e-12 && ordered && within(10, t),
        format!("100 instances, worst deviation from scalar loops {worst:.1e}, pcf ≤ pck: {ordered}, {t:.1?}"),
    ))
}

fn c4_kinematics() -> Result<Verdict> {
    let start = Instant::now();
    let skel = HandSkeleton::canonical();
    let cam = Camera::default();
    let samples = generate_dataset(&skel, &cam, 10_000, 17, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut bone, mut reproj, mut algebra) = (0.0f64, 0.0f64, 0.0f64);
    let mut exact = true;
    let t_flags = NormFlags {
        translate: true,
        ..NormFlags::NONE
    };
    let ts_flags = NormFlags {
        translate: true,
        scale: true,
        ..NormFlags::NONE
    };
    for s in &samples {
        for j in 1..NUM_JOINTS {
            let d = euclid(&s.joints3d[j], &s.joints3d[parent(j)]);
            bone = bone.max((d - skel.bone_length[j - 1]).abs());
        }
        exact &= project(&s.joints3d, &cam)? == s.joints2d;
        let angle = rng.random_range(-std::f64::consts::FRAC_PI_4..=std::f64::consts::FRAC_PI_4);
        let a = augment_with(s, &cam, angle, rng.random_bool(0.5));
        for (p, q) in project(&a.joints3d, &cam)?.iter().zip(&a.joints2d) {
            reproj = reproj.max((p[0] - q[0]).abs().max((p[1] - q[1]).abs()));
        }
        let (once, _) = normalize_pose(&s.joints3d, t_flags, s.handedness)?;
        let (twice, _) = normalize_pose(&once, t_flags, s.handedness)?;
        exact &= once == twice;
        let alpha = rng.random_range(0.1..10.0);
        let scaled: Vec<[f64; 3]> = s.joints3d.iter().map(|p| p.map(|c| alpha * c)).collect();
        let (x, _) = normalize_pose(&s.joints3d, ts_flags, s.handedness)?;
        let (y, _) = normalize_pose(&scaled, ts_flags, s.handedness)?;
        for (p, q) in x.iter().zip(&y) {
            for c in 0..3 {
                algebra = algebra.max((p[c] - q[c]).abs());
            }
        }
    }
    let t = start.elapsed();
    Ok(verdict(
        bone <= 1e-9 && exact && reproj <= 1e-9 && algebra <= 1e-9 && within(30, t),
        format!(
            "10000 samples, bone drift {bone:.1e}, projection bit-exact and T idempotent: {exact}, \
             re-projection after augmentation {reproj:.1e}, S scale deviation {algebra:.1e}, {t:.1?}"
        ),
    ))
}

/// Shared state of the training criteria.
struct Lifting {
    data: ModalData,
    held: ModalData,
    model: ModelConfig,
    cfg: TrainConfig,
    runs: Vec<(u8, TrainOutcome, Duration)>,
}

impl Lifting {
    fn new() -> Result<Self> {
        let skel = HandSkeleton::canonical();
        let cam = Camera::default();
        let pre = PreprocessConfig::default();
        let train_samples: Vec<PoseSample> = generate_dataset(&skel, &cam, 5000, 0, 1.0)?;
        let held_samples = generate_dataset(&skel, &cam, 500, 1, 1.0)?;
        Ok(Self {
            data: ModalData::build(&train_samples, &pre)?,
            held: ModalData::build(&held_samples, &pre)?,
            model: ModelConfig::default(),
            cfg: TrainConfig::default(),
            runs: Vec::new(),
        })
    }

    fn run(&mut self, variant: u8) -> Result<&(u8, TrainOutcome, Duration)> {
        if let Some(i) = self.runs.iter().position(|r| r.0 == variant) {
            return Ok(&self.runs[i]);
        }
        let start = Instant::now();
        let mut report = |r: &xmvae_core::training::HistoryRow| {
            if r.epoch.is_multiple_of(10) {
                eprintln!(
                    "  Var.{variant} epoch {} {}: held-out mean EPE {:.4}",
                    r.epoch,
                    r.pair,
                    r.heldout_mean_epe.unwrap_or(f64::NAN)
                );
            }
        };
        let o = train(
            &self.model,
            &VariantConfig::new(variant, TWO_D, THREE_D),
            &self.data,
            Some(&self.held),
            &self.cfg,
            None,
            Some(&mut report),
        )?;
        self.runs.push((variant, o, start.elapsed()));
        Ok(self.runs.last().expect("just pushed"))
    }
}

fn c5_lifting(l: &mut Lifting) -> Result<Verdict> {
    let lin = LinearRegressor::fit(&l.data.x2d, l.data.hand_input(), &l.data.x3d, 1e-9)?;
    let base = mean_epe(&joint_errors(&lin.predict(&l.held.x2d, l.held.hand_input())?, &l.held.x3d)?)?;
    let held = l.held.clone();
    let (_, o, t) = l.run(1)?;
    let vae = score(o, LIFT, &held)?.mean;
    Ok(verdict(
        vae <= 0.5 * base && within(15 * 60, *t),
        format!(
            "Var.1 held-out mean EPE {vae:.4} vs linear least squares {base:.4} (ratio {:.3}, need ≤ 0.5), {t:.0?}",
            vae / base
        ),
    ))
}

fn c6_spread(l: &mut Lifting) -> Result<Verdict> {
    let held = l.held.clone();
    let mut means = Vec::new();
    for v in [1, 2, 3, 4] {
        let (_, o, _) = l.run(v)?;
        means.push(score(o, LIFT, &held)?.mean);
    }
    let total: Duration = l.runs.iter().map(|r| r.2).sum();
    let min = means.iter().copied().fold(f64::INFINITY, f64::min);
    let max = means.iter().copied().fold(0.0, f64::max);
    Ok(verdict(
        max <= 1.25 * min && within(3600, total),
        format!(
            "Var.1–4 mean EPE {:.4} {:.4} {:.4} {:.4}, max/min {:.3} (need ≤ 1.25), {total:.0?}",
            means[0],
            means[1],
            means[2],
            means[3],
            max / min
        ),
    ))
}

fn c7_semisup(l: &Lifting) -> Result<Verdict> {
    let start = Instant::now();
    let rows = xmvae_core::experiments::semisup_sweep(&l.model, LIFT, &[0.1, 0.8], &l.data, &l.held, &l.cfg, None)?;
    let t = start.elapsed();
    let (low, high) = (&rows[0], &rows[1]);
    let ok = low.var3.median <= 1.05 * low.var1.median && low.improvement_ratio() >= high.improvement_ratio();
    Ok(verdict(
        ok && within(30 * 60, t),
        format!(
            "fraction 0.1: Var.3 median {:.4} vs Var.1 {:.4} (ratio {:.3}); fraction 0.8 ratio {:.3}, {t:.0?}",
            low.var3.median,
            low.var1.median,
            low.improvement_ratio(),
            high.improvement_ratio()
        ),
    ))
}

fn c8_alignment(l: &mut Lifting) -> Result<Verdict> {
    let held = l.held.clone();
    let (_, o, _) = l.run(4)?;
    let a = latent_alignment(&o.models, TWO_D, THREE_D, &held)?;
    let margin = a.margin_in_std_errs();
    Ok(verdict(
        a.matched_mean < a.mismatched_mean && margin >= 2.0 && a.samples >= 500,
        format!(
            "{} samples, matched {:.4} ± {:.4}, mismatched {:.4}, margin {margin:.1} standard errors",
            a.samples, a.matched_mean, a.matched_std_err, a.mismatched_mean
        ),
    ))
}

fn c9_walk(l: &mut Lifting) -> Result<Verdict> {
    let held = l.held.clone();
    let (_, o, _) = l.run(4)?;
    let start = Instant::now();
    let enc = o.models.encoder(TWO_D)?;
    let decoders: Vec<_> = o.models.decoders.values().collect();
    let mut exact = true;
    let mut bounded = true;
    let mut slack = f64::INFINITY;
    for k in 0..10 {
        let (a, b) = (2 * k, 2 * k + 1);
        let walk = interpolate(
            enc,
            &decoders,
            (held.x2d.row(a), held.handedness[a]),
            (held.x2d.row(b), held.handedness[b]),
            21,
            Interpolation::Linear,
        )?;
        for (i, idx) in [(0, a), (walk.steps.len() - 1, b)] {
            let hand = enc.spec.handedness_input.then_some(held.handedness[idx]);
            let direct = decode_all(&decoders, &embed(enc, held.x2d.row(idx), hand)?)?;
            exact &= direct == walk.steps[i].outputs;
        }
        for d in &decoders {
            let m = d.spec.modality;
            let bound = d.lipschitz_bound() * walk.max_latent_step();
            let delta = walk.max_step_delta(m);
            bounded &= delta <= bound;
            slack = slack.min(bound / delta.max(f64::MIN_POSITIVE));
        }
    }
    let t = start.elapsed();
    Ok(verdict(
        exact && bounded && within(10, t),
        format!("10 walks, endpoints bit-exact: {exact}, deltas within Lipschitz bound: {bounded} (min bound/delta {slack:.2}), {t:.1?}"),
    ))
}

fn xmvae(args: &[&str]) -> std::io::Result<bool> {
    Ok(Command::new(env!("CARGO_BIN_EXE_xmvae")).args(args).output()?.status.success())
}

fn files(dir: &Path) -> std::io::Result<Vec<(PathBuf, Vec<u8>)>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        out.push((p.file_name().unwrap().into(), fs::read(&p)?));
    }
    out.sort();
    Ok(out)
}

fn c10_reproducibility() -> Result<Verdict> {
    let root = tempfile::tempdir()?;
    let r = |p: &str| root.path().join(p).to_string_lossy().into_owned();
    let data = r("gen/dataset.jsonl");
    let ckpt = r("train/model.ckpt");
    let small = ["latent_dim=4", "hidden=16,16", "epochs=2", "batch=16"];
    let mut runs: Vec<(&str, Vec<String>)> = vec![
        ("generate", vec![format!("out_dir={}", r("gen")), "n=120".into(), "seed=5".into(), "label_fraction=0.5".into()]),
        ("train", vec![format!("out_dir={}", r("train")), format!("dataset={data}"), "holdout=20".into(), "variant=4".into()]),
        ("eval", vec![format!("out_dir={}", r("eval")), format!("dataset={data}"), format!("checkpoint={ckpt}")]),
        ("variants", vec![format!("out_dir={}", r("variants")), format!("dataset={data}"), "holdout=20".into()]),
        ("semisup", vec![format!("out_dir={}", r("semisup")), format!("dataset={data}"), "holdout=20".into(), "fractions=0.5".into()]),
        ("walk", vec![format!("out_dir={}", r("walk")), format!("dataset={data}"), format!("checkpoint={ckpt}"), "embeddings=10".into()]),
    ];
    for (cmd, sets) in runs.iter_mut() {
        if matches!(*cmd, "train" | "variants" | "semisup") {
            sets.extend(small.iter().map(|s| s.to_string()));
        }
    }
    let mut mismatched = Vec::new();
    for (cmd, sets) in &runs {
        let mut args = vec![*cmd];
        for s in sets {
            args.push("--set");
            args.push(s);
        }
        if !xmvae(&args)? {
            return Ok(verdict(false, format!("xmvae {cmd} failed")));
        }
    }
    for (cmd, _) in &runs {
        let dir = root.path().join(match *cmd {
            "generate" => "gen",
            other => other,
        });
        let first = dir.with_extension("first");
        fs::rename(&dir, &first)?;
        let cfg = first.join("resolved.cfg");
        if !xmvae(&[cmd, "--config", cfg.to_str().expect("utf-8 path")])? {
            return Ok(verdict(false, format!("rerun of xmvae {cmd} failed")));
        }
        if files(&first)? != files(&dir)? {
            mismatched.push(*cmd);
        }
        // Later commands read the original paths, which the rerun recreated.
    }
    Ok(verdict(
        mismatched.is_empty(),
        format!(
            "generate, train, eval, variants, semisup and walk rerun from resolved.cfg; mismatched: {mismatched:?}"
        ),
    ))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, v: Result<Verdict>| {
        let v = v.unwrap_or_else(|e| verdict(false, format!("error: {e}")));
        if !v.pass {
            failed += 1;
        }
        println!("criterion {n:2} {name}: {} | {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    };
    report(1, "gradient correctness", c1_gradients());
    report(2, "KL oracle", c2_kl());
    report(3, "metric oracles", c3_metrics());
    report(4, "kinematics", c4_kinematics());
    match Lifting::new() {
        Ok(mut l) => {
            report(5, "lifting vs linear baseline", c5_lifting(&mut l));
            report(6, "variant spread", c6_spread(&mut l));
            report(7, "semi-supervision", c7_semisup(&l));
            report(8, "shared latent space", c8_alignment(&mut l));
            report(9, "walk diagnostics", c9_walk(&mut l));
        }
        Err(e) => {
            for (n, name) in [(5, "lifting"), (6, "variant spread"), (7, "semi-supervision"), (8, "shared latent space"), (9, "walk diagnostics")] {
                report(n, name, Ok(verdict(false, format!("data generation failed: {e}"))));
            }
        }
    }
    report(10, "reproducibility", c10_reproducibility());
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

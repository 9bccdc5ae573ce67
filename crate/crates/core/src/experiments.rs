//! Multi-run experiments: the variant comparison table and the
//! semi-supervised label-fraction sweep.

use std::collections::BTreeMap;
use std::io::Write;

use crate::data::ModalData;
use crate::error::{Error, Result};
use crate::metrics::{mean_epe, median_epe};
use crate::models::ModelConfig;
use crate::training::{build_pairs, pair_errors, train, HistoryRow, Pair, SemiSupConfig, TrainConfig, TrainOutcome, VariantConfig};

pub const VARIANTS: [u8; 4] = [1, 2, 3, 4];

/// Held-out error of one trained (input → target) mapping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskScore {
    pub mean: f64,
    pub median: f64,
}

pub fn score(outcome: &TrainOutcome, pair: Pair, heldout: &ModalData) -> Result<TaskScore> {
    let e = pair_errors(&outcome.models, pair, heldout)?;
    Ok(TaskScore {
        mean: mean_epe(&e)?,
        median: median_epe(&e)?,
    })
}

/// Progress callback: variant (or fraction label), task and history row.
pub type Progress<'a> = &'a mut dyn FnMut(&str, &HistoryRow);

#[derive(Debug, Clone)]
pub struct VariantRun {
    pub variant: u8,
    pub task: Pair,
    pub score: TaskScore,
    /// Index into [`VariantTable::outcomes`]; variants whose pair sets
    /// coincide share one training run.
    pub outcome: usize,
}

#[derive(Debug, Clone)]
pub struct VariantTable {
    pub tasks: Vec<Pair>,
    pub runs: Vec<VariantRun>,
    pub outcomes: Vec<TrainOutcome>,
}

impl VariantTable {
    pub fn get(&self, variant: u8, task: Pair) -> Option<&VariantRun> {
        self.runs.iter().find(|r| r.variant == variant && r.task == task)
    }

    pub fn outcome(&self, variant: u8, task: Pair) -> Option<&TrainOutcome> {
        self.get(variant, task).map(|r| &self.outcomes[r.outcome])
    }

    /// Rows = variants, two columns (mean, median) per task.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut header = String::from("variant");
        for t in &self.tasks {
            let name = format!("{}_to_{}", t.input, t.target);
            header.push_str(&format!(",{name}_mean,{name}_median"));
        }
        writeln!(w, "{header}")?;
        for v in VARIANTS {
            let mut line = v.to_string();
            for &t in &self.tasks {
                let r = self
                    .get(v, t)
                    .ok_or_else(|| Error::InvalidArgument(format!("missing Var.{v} {t}")))?;
                line.push_str(&format!(",{:e},{:e}", r.score.mean, r.score.median));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Largest mean EPE over the smallest, for one task.
    pub fn spread(&self, task: Pair) -> Option<f64> {
        let means: Vec<f64> = self.runs.iter().filter(|r| r.task == task).map(|r| r.score.mean).collect();
        let min = means.iter().copied().fold(f64::INFINITY, f64::min);
        let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (!means.is_empty()).then_some(max / min)
    }
}

/// Trains Var.1–4 for each (input, target) task under one configuration.
/// Variants whose pair sets coincide (every variant when input = target)
/// are trained once.
pub fn variant_table(
    model_cfg: &ModelConfig,
    tasks: &[Pair],
    data: &ModalData,
    heldout: &ModalData,
    cfg: &TrainConfig,
    mut progress: Option<Progress<'_>>,
) -> Result<VariantTable> {
    let mut table = VariantTable {
        tasks: tasks.to_vec(),
        runs: Vec::new(),
        outcomes: Vec::new(),
    };
    let mut cache: BTreeMap<String, usize> = BTreeMap::new();
    for &task in tasks {
        for v in VARIANTS {
            let vc = VariantConfig::new(v, task.input, task.target);
            let key = build_pairs(&vc)?.to_string();
            let idx = match cache.get(&key) {
                Some(&i) => i,
                None => {
                    let label = format!("var{v} {task}");
                    let mut report = |row: &HistoryRow| {
                        if let Some(p) = progress.as_mut() {
                            p(&label, row);
                        }
                    };
                    let outcome = train(model_cfg, &vc, data, Some(heldout), cfg, None, Some(&mut report))?;
                    table.outcomes.push(outcome);
                    cache.insert(key, table.outcomes.len() - 1);
                    table.outcomes.len() - 1
                }
            };
            let score = score(&table.outcomes[idx], task, heldout)?;
            table.runs.push(VariantRun {
                variant: v,
                task,
                score,
                outcome: idx,
            });
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemiSupRow {
    pub fraction: f64,
    pub labeled: usize,
    /// Var.1 trained on the labeled subset only.
    pub var1: TaskScore,
    /// Var.3 with the autoencoding pair on every row.
    pub var3: TaskScore,
}

impl SemiSupRow {
    /// Var.1 median over Var.3 median; above 1 when unlabeled data helps.
    pub fn improvement_ratio(&self) -> f64 {
        self.var1.median / self.var3.median
    }
}

/// For each label fraction: Var.1 on the labeled rows against Var.3
/// semi-supervised on all rows, both scored on `task` over `heldout`.
/// Labels are drawn from `cfg.seed`.
pub fn semisup_sweep(
    model_cfg: &ModelConfig,
    task: Pair,
    fractions: &[f64],
    data: &ModalData,
    heldout: &ModalData,
    cfg: &TrainConfig,
    mut progress: Option<Progress<'_>>,
) -> Result<Vec<SemiSupRow>> {
    let mut rows = Vec::new();
    for &f in fractions {
        let semi = SemiSupConfig::fraction(f, cfg.seed);
        let mask = semi.labeled_mask(data)?;
        let labeled: Vec<usize> = (0..data.len()).filter(|&i| mask[i]).collect();
        if labeled.is_empty() {
            return Err(Error::InvalidArgument(format!("label fraction {f} leaves no labeled rows")));
        }
        let subset = data.select(&labeled)?;
        let mut run = |v: u8, d: &ModalData, s: Option<&SemiSupConfig>| -> Result<TaskScore> {
            let label = format!("fraction {f} var{v}");
            let mut report = |row: &HistoryRow| {
                if let Some(p) = progress.as_mut() {
                    p(&label, row);
                }
            };
            let vc = VariantConfig::new(v, task.input, task.target);
            let outcome = train(model_cfg, &vc, d, Some(heldout), cfg, s, Some(&mut report))?;
            score(&outcome, task, heldout)
        };
        let var1 = run(1, &subset, None)?;
        let var3 = run(3, data, Some(&semi))?;
        rows.push(SemiSupRow {
            fraction: f,
            labeled: labeled.len(),
            var1,
            var3,
        });
    }
    Ok(rows)
}

pub fn write_semisup_csv<W: Write>(w: &mut W, rows: &[SemiSupRow]) -> Result<()> {
    writeln!(
        w,
        "fraction,labeled,var1_mean,var1_median,var3_mean,var3_median,improvement_ratio"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:e},{:e},{:e},{:e},{:e}",
            r.fraction,
            r.labeled,
            r.var1.mean,
            r.var1.median,
            r.var3.mean,
            r.var3.median,
            r.improvement_ratio()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PreprocessConfig;
    use crate::models::Modality;
    use crate::hand::{generate_dataset, Camera, HandSkeleton};

    fn data(n: usize, seed: u64) -> ModalData {
        let s = generate_dataset(&HandSkeleton::canonical(), &Camera::default(), n, seed, 1.0).unwrap();
        ModalData::build(&s, &PreprocessConfig::default()).unwrap()
    }

    fn small() -> (ModelConfig, TrainConfig) {
        (
            ModelConfig {
                latent_dim: 4,
                hidden: vec![16],
                handedness_input: true,
            },
            TrainConfig {
                epochs: 2,
                batch_size: 8,
                ..Default::default()
            },
        )
    }

    #[test]
    fn table_has_four_rows_and_shares_identical_pair_sets() {
        let (m, c) = small();
        let tasks = [
            Pair::new(Modality::Keypoints2d, Modality::Joints3d),
            Pair::new(Modality::Joints3d, Modality::Joints3d),
        ];
        let t = variant_table(&m, &tasks, &data(24, 1), &data(6, 2), &c, None).unwrap();
        assert_eq!(t.runs.len(), 8);
        // Four distinct 2D→3D runs plus one shared 3D→3D run.
        assert_eq!(t.outcomes.len(), 5);
        let same = tasks[1];
        let s1 = t.get(1, same).unwrap().score;
        assert!(VARIANTS.iter().all(|&v| t.get(v, same).unwrap().score == s1));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("variant,2d_to_3d_mean,2d_to_3d_median,3d_to_3d_mean,3d_to_3d_median\n"));
        assert!(t.spread(tasks[0]).unwrap() >= 1.0);
    }

    #[test]
    fn full_labels_make_var3_match_plain_training() {
        let (m, c) = small();
        let task = Pair::new(Modality::Keypoints2d, Modality::Joints3d);
        let (d, h) = (data(20, 3), data(5, 4));
        let rows = semisup_sweep(&m, task, &[1.0], &d, &h, &c, None).unwrap();
        assert_eq!(rows[0].labeled, 20);
        let plain = train(&m, &VariantConfig::new(3, task.input, task.target), &d, Some(&h), &c, None, None).unwrap();
        assert_eq!(rows[0].var3, score(&plain, task, &h).unwrap());
        let plain1 = train(&m, &VariantConfig::new(1, task.input, task.target), &d, Some(&h), &c, None, None).unwrap();
        assert_eq!(rows[0].var1, score(&plain1, task, &h).unwrap());
        let mut buf = Vec::new();
        write_semisup_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    }
}

//! Flat `key = value` run configuration with `#` comments, resolved from
//! per-command defaults, an optional file and `--set` overrides.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use xmvae_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    Train,
    Eval,
    Variants,
    Semisup,
    Walk,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Variants => "variants",
            Command::Semisup => "semisup",
            Command::Walk => "walk",
        }
    }
}

const COMMON: &[(&str, &str)] = &[("seed", "0"), ("out_dir", "run")];

const GENERATOR: &[(&str, &str)] = &[("n", "5000"), ("label_fraction", "1")];

const DATA: &[(&str, &str)] = &[
    ("dataset", "dataset.jsonl"),
    ("norm2d", "T,S"),
    ("norm3d", "T,S"),
    ("handedness", "flag"),
    ("wrist_to_palm", "false"),
];

const HELDOUT: &[(&str, &str)] = &[("heldout", ""), ("holdout", "0")];

const MODEL: &[(&str, &str)] = &[("latent_dim", "32"), ("hidden", "512,512,512,512,512")];

const TRAINING: &[(&str, &str)] = &[
    ("input", "2d"),
    ("target", "3d"),
    ("epochs", "50"),
    ("batch", "64"),
    ("lr", "0.0001"),
    ("beta1", "0.9"),
    ("beta2", "0.999"),
    ("eps", "1e-8"),
    ("kl_weight", "1"),
    ("samples_per_step", "1"),
    ("reconstruction", "squared"),
    ("one_batch", "false"),
    ("augment_copies", "0"),
];

const TRAIN_ONLY: &[(&str, &str)] = &[
    ("variant", "1"),
    ("label_source", "none"),
    ("label_fraction", "1"),
    ("unlabeled_policy", "input-autoencoding"),
];

const THRESHOLDS: &[(&str, &str)] = &[("threshold_max", "2"), ("threshold_count", "21"), ("mm_per_unit", "1")];

const EVAL: &[(&str, &str)] = &[("checkpoint", "run/model.ckpt"), ("input", "2d"), ("target", "3d")];

const SEMISUP: &[(&str, &str)] = &[("fractions", "0.1,0.25,0.5,0.8")];

const WALK: &[(&str, &str)] = &[
    ("checkpoint", "run/model.ckpt"),
    ("input", "2d"),
    ("indices", "0,1"),
    ("steps", "11"),
    ("interpolation", "linear"),
    ("svg", "true"),
    ("embeddings", "0"),
];

fn defaults(cmd: Command) -> BTreeMap<String, String> {
    let groups: &[&[(&str, &str)]] = match cmd {
        Command::Generate => &[COMMON, GENERATOR],
        Command::Train => &[COMMON, DATA, HELDOUT, MODEL, TRAINING, TRAIN_ONLY],
        Command::Eval => &[COMMON, DATA, EVAL, THRESHOLDS],
        Command::Variants => &[COMMON, DATA, HELDOUT, MODEL, TRAINING],
        Command::Semisup => &[COMMON, DATA, HELDOUT, MODEL, TRAINING, SEMISUP],
        Command::Walk => &[COMMON, DATA, WALK],
    };
    groups
        .iter()
        .flat_map(|g| g.iter())
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Parses `key = value` lines. Text after `#` is a comment.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("config line {}: expected key = value", no + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Format(format!("config line {}: empty key", no + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Defaults, then the file's entries, then `sets` (`key=value`) in order.
    pub fn resolve(command: Command, file: Option<&Path>, sets: &[String]) -> Result<Self> {
        let mut cfg = Self {
            command,
            values: defaults(command),
        };
        if let Some(path) = file {
            let text = fs::read_to_string(path)?;
            let mut seen = BTreeMap::new();
            for (k, v) in parse(&text)? {
                if seen.insert(k.clone(), ()).is_some() {
                    return Err(Error::Format(format!("config key {k:?} given twice")));
                }
                cfg.set(&k, v)?;
            }
        }
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("--set expects key=value, got {s:?}")))?;
            cfg.set(k.trim(), v.trim().to_string())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: String) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(Error::InvalidArgument(format!(
                "unknown key {key:?} for {}",
                self.command.name()
            ))),
        }
    }

    pub fn str(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("{key} is not a {} key", self.command.name()))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let s = self.str(key);
        s.parse()
            .map_err(|e| Error::InvalidArgument(format!("{key} = {s:?}: {e}")))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.str(key).to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" | "on" => Ok(true),
            "false" | "no" | "0" | "off" => Ok(false),
            other => Err(Error::InvalidArgument(format!("{key} = {other:?} is not a boolean"))),
        }
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let s = self.str(key);
        if s.trim().is_empty() {
            return Ok(Vec::new());
        }
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|e| Error::InvalidArgument(format!("{key} entry {p:?}: {e}")))
            })
            .collect()
    }

    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.str(key))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.path("out_dir")
    }

    /// Sorted `key = value` lines.
    pub fn render(&self) -> String {
        let mut s = format!("# xmvae {}\n", self.command.name());
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}

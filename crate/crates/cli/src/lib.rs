//! `xmvae` command-line driver.

pub mod commands;
pub mod config;
pub mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use xmvae_core::Error;

use config::{Command, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "xmvae", version, about = "Cross-modal VAE for 2D/3D hand keypoints")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key; applied after the file, in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Synthesize a paired 2D/3D dataset.
    Generate(ConfigArgs),
    /// Train one variant.
    Train(ConfigArgs),
    /// Evaluate a checkpoint: EPE, PCK and PCF.
    Eval(ConfigArgs),
    /// Train and compare Var.1 to Var.4.
    Variants(ConfigArgs),
    /// Label-fraction sweep of Var.1 against semi-supervised Var.3.
    Semisup(ConfigArgs),
    /// Decode a straight path between two embedded samples.
    Walk(ConfigArgs),
}

impl Sub {
    fn split(&self) -> (Command, &ConfigArgs) {
        match self {
            Sub::Generate(a) => (Command::Generate, a),
            Sub::Train(a) => (Command::Train, a),
            Sub::Eval(a) => (Command::Eval, a),
            Sub::Variants(a) => (Command::Variants, a),
            Sub::Semisup(a) => (Command::Semisup, a),
            Sub::Walk(a) => (Command::Walk, a),
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 3,
        Error::Format(_) => 4,
        Error::NonFiniteLoss { .. } => 5,
        _ => 2,
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let (cmd, args) = cli.command.split();
    let result = RunConfig::resolve(cmd, args.config.as_deref(), &args.sets).and_then(|c| commands::dispatch(&c));
    match result {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("xmvae {}: {e}", cmd.name());
            exit_code(&e)
        }
    }
}

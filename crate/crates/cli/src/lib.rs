//! Command-line front end: each pipeline stage is a subcommand that reads and writes
//! plain-text artifacts and leaves a JSON manifest next to its outputs.

pub mod args;
pub mod commands;
pub mod manifest;

use std::ffi::OsString;

use anyhow::{bail, Result};
use clap::{ArgAction, CommandFactory, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::args::*;
use crate::manifest::Manifest;

/// Exit status for success, usage errors and data or numeric errors.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "jbsv", version, about = "Joint Bayesian and Siamese speaker-verification backend")]
pub struct Cli {
    /// More logging (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Sample a synthetic corpus and its ground-truth model.
    Synth(SynthArgs),
    /// Sample a labeled trial list from an embedding file.
    Trials(TrialsArgs),
    /// Length-normalize embeddings, optionally after an LDA transform.
    NormalizeEmbeddings(NormalizeArgs),
    /// Fit an LDA projection.
    FitLda(FitLdaArgs),
    /// Fit the JB model by EM on LDA + length-normalized embeddings.
    FitJb(FitJbArgs),
    /// Build a Siamese model from LDA + JB or from random weights.
    InitHybrid(InitHybridArgs),
    /// Fine-tune a Siamese model.
    Train(TrainArgs),
    /// Score a trial list.
    Score(ScoreArgs),
    /// EER, minDCF, DET and histograms for a score file.
    Eval(EvalArgs),
    /// Evaluate the A/G restricted settings of a two-branch model.
    Ablate(AblateArgs),
    /// Repeat the command recorded in a manifest.
    Run(RunArgs),
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => commands::synth(a),
        Command::Trials(a) => commands::trials(a),
        Command::NormalizeEmbeddings(a) => commands::normalize_embeddings(a),
        Command::FitLda(a) => commands::fit_lda_cmd(a),
        Command::FitJb(a) => commands::fit_jb(a),
        Command::InitHybrid(a) => commands::init_hybrid(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Score(a) => commands::score(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Run(a) => execute(from_manifest(&Manifest::load(&a.manifest)?)?),
    }
}

fn config<T: DeserializeOwned>(m: &Manifest) -> Result<T> {
    Ok(serde_json::from_value(m.config.clone())?)
}

/// Rebuilds the command a manifest records.
pub fn from_manifest(m: &Manifest) -> Result<Command> {
    let version = manifest::version_string();
    if m.version != version {
        log::warn!("manifest written by {}, running {}", m.version, version);
    }
    Ok(match m.command.as_str() {
        "synth" => Command::Synth(config(m)?),
        "trials" => Command::Trials(config(m)?),
        "normalize-embeddings" => Command::NormalizeEmbeddings(config(m)?),
        "fit-lda" => Command::FitLda(config(m)?),
        "fit-jb" => Command::FitJb(config(m)?),
        "init-hybrid" => Command::InitHybrid(config(m)?),
        "train" => Command::Train(config(m)?),
        "score" => Command::Score(config(m)?),
        "eval" => Command::Eval(config(m)?),
        "ablate" => Command::Ablate(config(m)?),
        other => bail!("manifest names unknown command `{other}`"),
    })
}

/// Cross-argument rules clap cannot express when defaults are involved.
fn check_usage(cli: Cli) -> Result<Cli, clap::Error> {
    if let Command::InitHybrid(a) = &cli.command {
        if a.init == InitKind::Jb && a.jb.is_none() {
            return Err(Cli::command().error(
                clap::error::ErrorKind::MissingRequiredArgument,
                "--jb is required with --init jb",
            ));
        }
    }
    Ok(cli)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args).and_then(check_usage) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn train_defaults() {
        let cli = Cli::try_parse_from(["jbsv", "train", "--model", "m", "--embeddings", "e", "--out", "o"]).unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        assert_eq!((a.batch_size, a.lr, a.split, a.epochs), (4096, 0.0005, 0.9, 20));
        assert_eq!(a.loss, jbsv::hybrid::LossKind::Dem);
    }

    #[test]
    fn repeated_p_tar() {
        let cli = Cli::try_parse_from([
            "jbsv", "eval", "--scores", "s", "--trials", "t", "--out", "o", "--p-tar", "0.01", "--p-tar", "0.001",
        ])
        .unwrap();
        let Command::Eval(a) = cli.command else { panic!() };
        assert_eq!(a.costs.p_tar, vec![0.01, 0.001]);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(["jbsv", "train", "--lr"]), EXIT_USAGE);
        assert_eq!(main_with_args(["jbsv", "eval", "--scores", "s", "--trials", "t", "--out", "o", "--p-tar", "2"]), EXIT_USAGE);
        assert_eq!(main_with_args(["jbsv", "score", "--embeddings", "e", "--trials", "t", "--out", "o"]), EXIT_USAGE);
    }

    #[test]
    fn manifest_config_roundtrip() {
        let cli = Cli::try_parse_from([
            "jbsv", "train", "--model", "m", "--embeddings", "e", "--out", "o", "--freeze", "W", "--freeze", "alpha",
            "--loss", "wbce",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        let m = Manifest::new("train", Some(a.seed), &a).unwrap();
        let Command::Train(b) = from_manifest(&m).unwrap() else { panic!() };
        assert_eq!(a, b);
    }
}

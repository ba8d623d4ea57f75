//! Argument structs. Each one is both a clap argument group and the serialized
//! configuration stored in the run manifest.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use jbsv::hybrid::{LossKind, Param, RestrictMode, Variant};
use jbsv::synth::{CovSpec, Mismatch};
use serde::{Deserialize, Serialize};

/// Serde through `Display`/`FromStr`, for core enums that carry no serde derives.
mod text {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

mod text_vec {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &[T], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.to_string()))
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<Vec<T>, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| s.parse().map_err(de::Error::custom))
            .collect()
    }
}

fn probability(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not in (0, 1)"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} is not a finite non-negative number"))
    }
}

/// Covariance recipe: `iso:S`, `diag:a,b,...` or `spd:SEED:COND[:SCALE]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovArg(pub CovSpec);

impl FromStr for CovArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let num = |t: &str| t.parse::<f64>().map_err(|e| format!("bad number `{t}` in `{s}`: {e}"));
        match kind {
            "iso" => Ok(CovArg(CovSpec::Isotropic(num(rest)?))),
            "diag" => Ok(CovArg(CovSpec::Diagonal(
                rest.split(',').map(num).collect::<Result<_, _>>()?,
            ))),
            "spd" => {
                let parts: Vec<&str> = rest.split(':').collect();
                if !(2..=3).contains(&parts.len()) {
                    return Err(format!("expected spd:SEED:COND[:SCALE], got `{s}`"));
                }
                Ok(CovArg(CovSpec::RandomSpd {
                    seed: parts[0].parse().map_err(|e| format!("bad seed in `{s}`: {e}"))?,
                    cond_cap: num(parts[1])?,
                    scale: parts.get(2).map(|t| num(t)).transpose()?.unwrap_or(1.0),
                }))
            }
            _ => Err(format!("unknown covariance recipe `{s}` (iso:S, diag:a,b,.., spd:SEED:COND[:SCALE])")),
        }
    }
}

impl fmt::Display for CovArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0 {
            CovSpec::Isotropic(v) => write!(f, "iso:{v}"),
            CovSpec::Diagonal(d) => {
                let items: Vec<String> = d.iter().map(|v| v.to_string()).collect();
                write!(f, "diag:{}", items.join(","))
            }
            CovSpec::RandomSpd { seed, cond_cap, scale } => write!(f, "spd:{seed}:{cond_cap}:{scale}"),
        }
    }
}

/// Noise model violation: `none`, `heavy-tail:DOF` or `channel-shift[:FRACTION[:NORM]]`.
#[derive(Clone, Debug, PartialEq)]
pub enum MismatchArg {
    None,
    HeavyTail(f64),
    ChannelShift { fraction: f64, norm: Option<f64> },
}

impl MismatchArg {
    pub fn to_mismatch(&self, direction_seed: u64) -> Mismatch {
        match *self {
            MismatchArg::None => Mismatch::None,
            MismatchArg::HeavyTail(dof) => Mismatch::HeavyTail { dof },
            MismatchArg::ChannelShift { fraction, norm } => Mismatch::ChannelShift {
                fraction,
                offset_norm: norm,
                direction_seed,
            },
        }
    }
}

impl FromStr for MismatchArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| t.parse::<f64>().map_err(|e| format!("bad number `{t}` in `{s}`: {e}"));
        match parts.as_slice() {
            ["none"] => Ok(MismatchArg::None),
            ["heavy-tail"] => Ok(MismatchArg::HeavyTail(4.0)),
            ["heavy-tail", dof] => Ok(MismatchArg::HeavyTail(num(dof)?)),
            ["channel-shift"] => Ok(MismatchArg::ChannelShift {
                fraction: 0.5,
                norm: None,
            }),
            ["channel-shift", fr] => Ok(MismatchArg::ChannelShift {
                fraction: num(fr)?,
                norm: None,
            }),
            ["channel-shift", fr, n] => Ok(MismatchArg::ChannelShift {
                fraction: num(fr)?,
                norm: Some(num(n)?),
            }),
            _ => Err(format!(
                "unknown mismatch `{s}` (none, heavy-tail[:DOF], channel-shift[:FRACTION[:NORM]])"
            )),
        }
    }
}

impl fmt::Display for MismatchArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MismatchArg::None => write!(f, "none"),
            MismatchArg::HeavyTail(dof) => write!(f, "heavy-tail:{dof}"),
            MismatchArg::ChannelShift { fraction, norm: None } => write!(f, "channel-shift:{fraction}"),
            MismatchArg::ChannelShift {
                fraction,
                norm: Some(n),
            } => write!(f, "channel-shift:{fraction}:{n}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    Jb,
    Random,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub speakers: usize,
    /// Utterances per speaker (the lower bound when --utts-max is given).
    #[arg(long)]
    pub utts: usize,
    /// Draw each speaker's utterance count uniformly from utts..=utts-max.
    #[arg(long)]
    pub utts_max: Option<usize>,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Speaker covariance recipe.
    #[arg(long, default_value = "iso:1")]
    #[serde(with = "text")]
    pub cu: CovArg,
    /// Noise covariance recipe.
    #[arg(long, default_value = "iso:1")]
    #[serde(with = "text")]
    pub cn: CovArg,
    #[arg(long, default_value = "none")]
    #[serde(with = "text")]
    pub mismatch: MismatchArg,
    /// Seed of the channel-shift direction, shared by corpora that should see the same channel.
    #[arg(long, default_value_t = 0)]
    pub channel_seed: u64,
    /// Embedding file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth model file; defaults to `<out>.truth`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialsArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub targets: usize,
    #[arg(long)]
    pub nontargets: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizeArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Apply this LDA transform before length normalization.
    #[arg(long)]
    pub lda: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitLdaArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Output dimension.
    #[arg(long)]
    pub dim: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitJbArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// LDA transform applied (with length normalization) before fitting.
    #[arg(long)]
    pub lda: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub rel_tol: f64,
    /// Drop the posterior covariance terms from the M-step.
    #[arg(long)]
    pub point_estimate: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitHybridArgs {
    #[arg(long, value_enum, default_value = "jb")]
    pub init: InitKind,
    /// LDA transform; supplies the frozen mean (and W for jb init).
    #[arg(long)]
    pub lda: PathBuf,
    /// Fitted JB model, required for jb init.
    #[arg(long)]
    pub jb: Option<PathBuf>,
    /// Branch dimension for random init; defaults to the LDA output dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value = "two-branch")]
    #[serde(with = "text")]
    pub variant: Variant,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Initial model.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value_t = 4096)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.0005)]
    pub lr: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1, value_parser = probability)]
    pub pos_fraction: f64,
    #[arg(long, default_value_t = 0.9, value_parser = probability)]
    pub split: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "dem")]
    #[serde(with = "text")]
    pub loss: LossKind,
    #[arg(long, default_value_t = 0.01, value_parser = probability)]
    pub p_tar: f64,
    #[arg(long, default_value_t = 1.0, value_parser = non_negative)]
    pub c_miss: f64,
    #[arg(long, default_value_t = 1.0, value_parser = non_negative)]
    pub c_fa: f64,
    #[arg(long, default_value_t = 0.01, value_parser = probability)]
    pub w_s: f64,
    /// Parameters excluded from updates (W, P_A, P_G, alpha, beta, P, d0, lambda).
    #[arg(long)]
    #[serde(with = "text_vec")]
    pub freeze: Vec<Param>,
    /// Validation trial count; defaults to the batch size.
    #[arg(long)]
    pub val_trials: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV; defaults to `<out>.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub trials: PathBuf,
    /// Siamese model file.
    #[arg(long, required_unless_present_all = ["lda", "jb"], conflicts_with_all = ["lda", "jb"])]
    pub model: Option<PathBuf>,
    /// LDA transform of the generative pipeline.
    #[arg(long, requires = "jb")]
    pub lda: Option<PathBuf>,
    /// JB model of the generative pipeline.
    #[arg(long, requires = "lda")]
    pub jb: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostArgs {
    /// Target prior of a minDCF operating point; repeat for several.
    #[arg(long = "p-tar", default_values_t = [0.01, 0.001], value_parser = probability)]
    pub p_tar: Vec<f64>,
    #[arg(long, default_value_t = 1.0, value_parser = non_negative)]
    pub c_miss: f64,
    #[arg(long, default_value_t = 1.0, value_parser = non_negative)]
    pub c_fa: f64,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: PathBuf,
    /// Labeled trial list matching the score file.
    #[arg(long)]
    pub trials: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub costs: CostArgs,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Report file; the DET and histogram CSVs default to siblings of it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub det: Option<PathBuf>,
    #[arg(long)]
    pub hist: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblateArgs {
    /// Two-branch model to restrict.
    #[arg(long)]
    pub model: PathBuf,
    /// Optional Mahalanobis model scored as an extra row.
    #[arg(long)]
    pub md_model: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub trials: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub costs: CostArgs,
    /// Settings to evaluate; all four when omitted.
    #[arg(long)]
    #[serde(with = "text_vec")]
    pub mode: Vec<RestrictMode>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArgs {
    /// Manifest written by an earlier command.
    #[arg(long)]
    pub manifest: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cov_arg_roundtrip() {
        for s in ["iso:2.5", "diag:1,0.5,3", "spd:7:50:1.5"] {
            let c: CovArg = s.parse().unwrap();
            assert_eq!(c.to_string(), s);
        }
        assert_eq!("spd:1:10".parse::<CovArg>().unwrap().to_string(), "spd:1:10:1");
        assert!("spd:1".parse::<CovArg>().is_err());
        assert!("gauss:1".parse::<CovArg>().is_err());
    }

    #[test]
    fn mismatch_arg_roundtrip() {
        for s in ["none", "heavy-tail:4", "channel-shift:0.5", "channel-shift:0.25:3"] {
            let m: MismatchArg = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
        assert_eq!("heavy-tail".parse::<MismatchArg>().unwrap(), MismatchArg::HeavyTail(4.0));
        assert!("channel-shift:a".parse::<MismatchArg>().is_err());
    }

    #[test]
    fn probability_bounds() {
        assert!(probability("0.01").is_ok());
        assert!(probability("1").is_err());
        assert!(probability("0").is_err());
        assert!(non_negative("-1").is_err());
    }
}

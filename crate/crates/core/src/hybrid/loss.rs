use std::fmt;
use std::str::FromStr;

use crate::corpus::Label;
use crate::error::{Error, Result};

use super::model::sigmoid;

/// Floor applied to log arguments.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Bce,
    Wbce,
    Dem,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Bce => "bce",
            LossKind::Wbce => "wbce",
            LossKind::Dem => "dem",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "wbce" => Ok(LossKind::Wbce),
            "dem" => Ok(LossKind::Dem),
            _ => Err(Error::Config(format!("unknown loss `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub p_tar: f64,
    pub c_miss: f64,
    pub c_fa: f64,
    /// Weight of the target term in WBCE.
    pub w_s: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Dem,
            p_tar: 0.01,
            c_miss: 1.0,
            c_fa: 1.0,
            w_s: 0.01,
        }
    }
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        LossConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.p_tar) || !open_unit(self.w_s) {
            return Err(Error::InvalidCost);
        }
        if !(self.c_miss >= 0.0 && self.c_fa >= 0.0)
            || !(self.c_miss + self.c_fa > 0.0)
            || !self.c_miss.is_finite()
            || !self.c_fa.is_finite()
        {
            return Err(Error::InvalidCost);
        }
        Ok(())
    }

    /// Upper bound of the DEM loss.
    pub fn dem_max(&self) -> f64 {
        self.p_tar * self.c_miss + (1.0 - self.p_tar) * self.c_fa
    }
}

/// One scored trial: raw score `r`, probability `f = sigmoid(alpha r + beta)`, label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub r: f64,
    pub f: f64,
    pub label: Label,
}

fn counts(labels: impl Iterator<Item = Label>) -> (usize, usize) {
    labels.fold((0, 0), |(t, n), l| if l.is_same() { (t + 1, n) } else { (t, n + 1) })
}

fn check_batch(kind: LossKind, n_tar: usize, n_non: usize) -> Result<()> {
    if n_tar + n_non == 0 {
        return Err(Error::DegenerateBatch("empty batch"));
    }
    if kind != LossKind::Bce && (n_tar == 0 || n_non == 0) {
        return Err(Error::DegenerateBatch("both labels are required"));
    }
    Ok(())
}

fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_CLAMP).ln()
}

/// Loss of a batch given `(f, 1 - f)` per trial; `1 - f` is passed separately so that
/// saturated sigmoids keep their precision.
fn loss_from_probs(probs: &[(f64, f64)], labels: &[Label], cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let (n_tar, n_non) = counts(labels.iter().copied());
    check_batch(cfg.kind, n_tar, n_non)?;
    let it = probs.iter().zip(labels);
    Ok(match cfg.kind {
        LossKind::Bce => -it
            .map(|(&(f, fc), l)| if l.is_same() { clamped_ln(f) } else { clamped_ln(fc) })
            .sum::<f64>(),
        LossKind::Wbce => {
            let (mut ls, mut ld) = (0.0, 0.0);
            for (&(f, fc), l) in it {
                if l.is_same() {
                    ls -= clamped_ln(f);
                } else {
                    ld -= clamped_ln(fc);
                }
            }
            cfg.w_s * ls / n_tar as f64 + (1.0 - cfg.w_s) * ld / n_non as f64
        }
        LossKind::Dem => {
            let (mut miss, mut fa) = (0.0, 0.0);
            for (&(f, fc), l) in it {
                if l.is_same() {
                    miss += fc;
                } else {
                    fa += f;
                }
            }
            cfg.p_tar * cfg.c_miss * miss / n_tar as f64
                + (1.0 - cfg.p_tar) * cfg.c_fa * fa / n_non as f64
        }
    })
}

/// Batch loss from already computed probabilities.
pub fn loss(batch: &[Scored], cfg: &LossConfig) -> Result<f64> {
    let probs: Vec<(f64, f64)> = batch.iter().map(|s| (s.f, 1.0 - s.f)).collect();
    let labels: Vec<Label> = batch.iter().map(|s| s.label).collect();
    loss_from_probs(&probs, &labels, cfg)
}

/// Loss as a function of the logits `z` (with `f = sigmoid(z)`), and `dL/dz` per trial.
pub(crate) fn loss_and_dz(z: &[f64], labels: &[Label], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    let probs: Vec<(f64, f64)> = z.iter().map(|&z| (sigmoid(z), sigmoid(-z))).collect();
    let value = loss_from_probs(&probs, labels, cfg)?;
    let (n_tar, n_non) = counts(labels.iter().copied());
    let (nt, nn) = (n_tar.max(1) as f64, n_non.max(1) as f64);
    let dz = probs
        .iter()
        .zip(labels)
        .map(|(&(f, fc), l)| {
            let same = l.is_same();
            match cfg.kind {
                // d/dz[-ln f] = -(1 - f), d/dz[-ln(1 - f)] = f; zero inside the clamp
                LossKind::Bce => {
                    if same {
                        if f > LOG_CLAMP { -fc } else { 0.0 }
                    } else if fc > LOG_CLAMP {
                        f
                    } else {
                        0.0
                    }
                }
                LossKind::Wbce => {
                    if same {
                        if f > LOG_CLAMP { -cfg.w_s * fc / nt } else { 0.0 }
                    } else if fc > LOG_CLAMP {
                        (1.0 - cfg.w_s) * f / nn
                    } else {
                        0.0
                    }
                }
                LossKind::Dem => {
                    let s = f * fc;
                    if same {
                        -cfg.p_tar * cfg.c_miss * s / nt
                    } else {
                        (1.0 - cfg.p_tar) * cfg.c_fa * s / nn
                    }
                }
            }
        })
        .collect();
    Ok((value, dz))
}

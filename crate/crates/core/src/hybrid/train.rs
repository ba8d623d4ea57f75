use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::corpus::EmbeddingSet;
use crate::error::{Error, Result};

use super::adam::{adam_step, AdamState};
use super::grad::{batch_loss, grad};
use super::loss::LossConfig;
use super::model::{Param, SiameseModel};
use super::sampler::PairSampler;

/// Offset mixed into the seed of the validation trial generator.
const VALIDATION_STREAM: u64 = 0x005E_ED0F_7A11;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub pos_fraction: f64,
    /// Fraction of speakers used for training; the rest validate.
    pub split: f64,
    pub seed: u64,
    pub freeze: Vec<Param>,
    /// Size of the fixed validation trial set; `None` means `batch_size`.
    pub val_trials: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.0005,
            batch_size: 4096,
            epochs: 20,
            pos_fraction: 0.1,
            split: 0.9,
            seed: 0,
            freeze: Vec::new(),
            val_trials: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if !(self.pos_fraction > 0.0 && self.pos_fraction < 1.0) {
            return Err(Error::Config("pos_fraction must be in (0, 1)".into()));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::Config("split must be in (0, 1)".into()));
        }
        if self.val_trials.is_some_and(|n| n < 2) {
            return Err(Error::Config("validation set needs at least 2 trials".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Snapshot with the lowest validation loss (possibly the initial model).
    pub model: SiameseModel,
    pub history: Vec<EpochRecord>,
    /// Validation loss before any update; `None` when no epochs were run.
    pub initial_val_loss: Option<f64>,
    /// 0 when the initial model was never improved upon.
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best_val_loss(&self) -> Option<f64> {
        let init = self.initial_val_loss?;
        Some(self.history.iter().map(|r| r.val_loss).fold(init, f64::min))
    }
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        out.push_str(&format!("{},{:?},{:?}\n", r.epoch, r.train_loss, r.val_loss));
    }
    out
}

/// Row indices per speaker.
pub type Groups = Vec<Vec<usize>>;

/// Speaker-disjoint split of row groups: `(train, validation)`.
pub fn split_speakers(set: &EmbeddingSet, split: f64, rng: &mut ChaCha20Rng) -> Result<(Groups, Groups)> {
    let mut groups: Vec<Vec<usize>> = set.speaker_groups().into_iter().map(|(_, r)| r).collect();
    let s = groups.len();
    if s < 4 {
        return Err(Error::DegenerateCorpus("training needs at least four speakers"));
    }
    groups.shuffle(rng);
    let n_train = ((split * s as f64).round() as usize).clamp(2, s - 2);
    let val = groups.split_off(n_train);
    Ok((groups, val))
}

/// Fine-tunes `model` with Adam on random trial batches, keeping the snapshot with the
/// lowest loss on a fixed validation trial set from held-out speakers.
pub fn train(model: &SiameseModel, set: &EmbeddingSet, tcfg: &TrainConfig, lcfg: &LossConfig) -> Result<TrainOutcome> {
    tcfg.validate()?;
    lcfg.validate()?;
    model.validate()?;
    if set.dim() != model.input_dim() {
        return Err(Error::Shape {
            what: "embedding dimension",
            expected: model.input_dim(),
            found: set.dim(),
        });
    }
    if tcfg.epochs == 0 {
        return Ok(TrainOutcome {
            model: model.clone(),
            history: Vec::new(),
            initial_val_loss: None,
            best_epoch: 0,
        });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(tcfg.seed);
    let (train_groups, val_groups) = split_speakers(set, tcfg.split, &mut rng)?;
    let train_sampler = PairSampler::from_groups(train_groups)?;
    let val_sampler = PairSampler::from_groups(val_groups)?;
    let mut val_rng = ChaCha20Rng::seed_from_u64(tcfg.seed ^ VALIDATION_STREAM);
    let val_batch = val_sampler.batch(
        tcfg.val_trials.unwrap_or(tcfg.batch_size),
        tcfg.pos_fraction,
        &mut val_rng,
    )?;
    let vectors = set.vectors();
    let steps = train_sampler.num_rows().div_ceil(tcfg.batch_size);

    let mut current = model.clone();
    let mut state = AdamState::new(&current);
    let initial = batch_loss(&current, vectors, &val_batch, lcfg)?;
    let mut best = (initial, 0usize, current.clone());
    let mut history = Vec::with_capacity(tcfg.epochs);
    log::info!("epoch 0 val_loss {initial:.6}");

    for epoch in 1..=tcfg.epochs {
        let mut total = 0.0;
        for _ in 0..steps {
            let batch = train_sampler.batch(tcfg.batch_size, tcfg.pos_fraction, &mut rng)?;
            let (value, g) = grad(&current, vectors, &batch, lcfg, &tcfg.freeze)?;
            adam_step(&mut current, &g, &mut state, tcfg.lr)?;
            total += value;
        }
        let train_loss = total / steps as f64;
        let val_loss = batch_loss(&current, vectors, &val_batch, lcfg)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        log::info!("epoch {epoch} train_loss {train_loss:.6} val_loss {val_loss:.6}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, current.clone());
        }
    }
    Ok(TrainOutcome {
        model: best.2,
        history,
        initial_val_loss: Some(initial),
        best_epoch: best.1,
    })
}

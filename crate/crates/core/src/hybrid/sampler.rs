use rand::Rng;

use crate::corpus::{EmbeddingSet, Label};
use crate::error::{Error, Result};

use super::train::TrainConfig;

/// A labeled trial given by two row indices of an embedding set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub label: Label,
}

/// Uniform sampler over same-speaker and different-speaker utterance pairs.
#[derive(Clone, Debug)]
pub struct PairSampler {
    groups: Vec<Vec<usize>>,
    rows: Vec<usize>,
    speaker_of: Vec<usize>,
    /// Cumulative count of same-speaker pairs, per group.
    same_cum: Vec<u64>,
}

impl PairSampler {
    pub fn new(set: &EmbeddingSet) -> Result<Self> {
        Self::from_groups(set.speaker_groups().into_iter().map(|(_, rows)| rows).collect())
    }

    pub fn from_groups(groups: Vec<Vec<usize>>) -> Result<Self> {
        if groups.len() < 2 {
            return Err(Error::DegenerateCorpus("at least two speakers are needed"));
        }
        let n = groups.iter().flatten().max().map_or(0, |&m| m + 1);
        let mut speaker_of = vec![usize::MAX; n];
        let mut same_cum = Vec::with_capacity(groups.len());
        let mut acc = 0u64;
        for (s, rows) in groups.iter().enumerate() {
            for &r in rows {
                speaker_of[r] = s;
            }
            let m = rows.len() as u64;
            acc += m * m.saturating_sub(1) / 2;
            same_cum.push(acc);
        }
        if acc == 0 {
            return Err(Error::DegenerateCorpus("no speaker has two utterances"));
        }
        let rows = groups.iter().flatten().copied().collect();
        Ok(PairSampler {
            groups,
            rows,
            speaker_of,
            same_cum,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Two distinct utterances of one speaker, uniform over all such pairs.
    pub fn same(&self, rng: &mut impl Rng) -> Pair {
        let total = *self.same_cum.last().expect("non-empty");
        let k = rng.random_range(0..total);
        let s = self.same_cum.partition_point(|&c| c <= k);
        let rows = &self.groups[s];
        let a = rng.random_range(0..rows.len());
        let mut b = rng.random_range(0..rows.len() - 1);
        if b >= a {
            b += 1;
        }
        Pair {
            i: rows[a],
            j: rows[b],
            label: Label::Same,
        }
    }

    /// Two utterances of different speakers, uniform over all such pairs.
    pub fn different(&self, rng: &mut impl Rng) -> Pair {
        let all = &self.rows;
        loop {
            let i = all[rng.random_range(0..all.len())];
            let j = all[rng.random_range(0..all.len())];
            if self.speaker_of[i] != self.speaker_of[j] {
                return Pair {
                    i,
                    j,
                    label: Label::Different,
                };
            }
        }
    }

    /// `size` trials of which `ceil(pos_fraction * size)` are same-speaker, clamped so
    /// that both labels appear.
    pub fn batch(&self, size: usize, pos_fraction: f64, rng: &mut impl Rng) -> Result<Vec<Pair>> {
        if size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        let n_pos = ((pos_fraction * size as f64).ceil() as usize).clamp(1, size - 1);
        let mut out = Vec::with_capacity(size);
        for _ in 0..n_pos {
            out.push(self.same(rng));
        }
        while out.len() < size {
            out.push(self.different(rng));
        }
        Ok(out)
    }
}

/// One training batch drawn according to `cfg.batch_size` and `cfg.pos_fraction`.
pub fn sample_minibatch(set: &EmbeddingSet, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Vec<Pair>> {
    PairSampler::new(set)?.batch(cfg.batch_size, cfg.pos_fraction, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn forced_composition() {
        let s = PairSampler::from_groups(vec![vec![0, 1], vec![2, 3]]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let b = s.batch(4, 0.5, &mut rng).unwrap();
        assert_eq!(b.iter().filter(|p| p.label.is_same()).count(), 2);
        for p in &b {
            assert_ne!(p.i, p.j);
        }
    }

    #[test]
    fn needs_a_same_pair() {
        assert!(matches!(
            PairSampler::from_groups(vec![vec![0], vec![1]]),
            Err(Error::DegenerateCorpus(_))
        ));
        assert!(matches!(
            PairSampler::from_groups(vec![vec![0, 1]]),
            Err(Error::DegenerateCorpus(_))
        ));
    }

    #[test]
    fn both_labels_present() {
        let s = PairSampler::from_groups(vec![vec![0, 1, 2], vec![3, 4]]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for pf in [0.0, 0.01, 0.99, 1.0] {
            let b = s.batch(5, pf, &mut rng).unwrap();
            let pos = b.iter().filter(|p| p.label.is_same()).count();
            assert!((1..5).contains(&pos));
        }
    }

    #[test]
    fn same_pairs_uniform_over_pairs() {
        // group 0 has 3 pairs, group 1 has 1: expect a 3:1 split
        let s = PairSampler::from_groups(vec![vec![0, 1, 2], vec![3, 4]]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let n = 40_000;
        let g0 = (0..n).filter(|_| s.same(&mut rng).i < 3).count();
        let frac = g0 as f64 / n as f64;
        assert!((frac - 0.75).abs() < 0.01, "{frac}");
    }
}

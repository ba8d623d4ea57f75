//! Synthetic corpora drawn from the two-covariance model, with optional violations of
//! its Gaussian noise assumption.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::corpus::{EmbeddingSet, Trial, TrialList};
use crate::error::{Error, Result};
use crate::hybrid::PairSampler;
use crate::linalg::{spd_cholesky, sym_eigen_desc, symmetrize};

/// Covariance recipe.
#[derive(Clone, Debug, PartialEq)]
pub enum CovSpec {
    /// `sigma2 * I`
    Isotropic(f64),
    Diagonal(Vec<f64>),
    /// `Q diag(lambda) Q^T` with a seeded Haar-random orthogonal `Q` and
    /// log-uniform eigenvalues whose ratio stays within `cond_cap`, rescaled to
    /// mean eigenvalue `scale`.
    RandomSpd { seed: u64, cond_cap: f64, scale: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Mismatch {
    None,
    /// Multivariate-t noise with `dof` degrees of freedom, rescaled to covariance `C_n`.
    HeavyTail { dof: f64 },
    /// A fixed offset added to a random `fraction` of utterances. The default offset
    /// norm is `sqrt(tr C_n)`. The direction is drawn from `direction_seed`, so corpora
    /// generated with different seeds share the same channel.
    ChannelShift {
        fraction: f64,
        offset_norm: Option<f64>,
        direction_seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UttCount {
    Fixed(usize),
    /// Uniform in `lo..=hi` per speaker.
    Range(usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub utts: UttCount,
    pub dim: usize,
    pub cu: CovSpec,
    pub cn: CovSpec,
    pub mismatch: Mismatch,
    pub seed: u64,
}

impl SynthConfig {
    pub fn gaussian(n_speakers: usize, utts: usize, dim: usize, seed: u64) -> Self {
        SynthConfig {
            n_speakers,
            utts: UttCount::Fixed(utts),
            dim,
            cu: CovSpec::Isotropic(1.0),
            cn: CovSpec::Isotropic(1.0),
            mismatch: Mismatch::None,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(Error::InsufficientClasses(self.n_speakers));
        }
        if self.dim == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        match self.utts {
            UttCount::Fixed(0) => return Err(Error::Config("utterances per speaker must be >= 1".into())),
            UttCount::Range(lo, hi) if lo == 0 || hi < lo => {
                return Err(Error::Config(format!("invalid utterance range {lo}..={hi}")))
            }
            _ => {}
        }
        match self.mismatch {
            Mismatch::HeavyTail { dof } if !(dof > 2.0) => {
                Err(Error::Config("heavy-tail dof must exceed 2".into()))
            }
            Mismatch::ChannelShift {
                fraction, offset_norm, ..
            } if !(0.0..=1.0).contains(&fraction) || offset_norm.is_some_and(|n| !(n >= 0.0)) =>
            {
                Err(Error::Config("channel shift needs fraction in [0, 1] and a non-negative norm".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Ground-truth covariances of a generated corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub cu: DMatrix<f64>,
    pub cn: DMatrix<f64>,
}

/// Haar-distributed random orthogonal matrix.
pub fn random_orthogonal(dim: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (k, mut col) in q.column_iter_mut().enumerate() {
        if r[(k, k)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

fn build_covariance(spec: &CovSpec, dim: usize, strictly_pd: bool, what: &str) -> Result<DMatrix<f64>> {
    let ok = |v: f64| if strictly_pd { v > 0.0 } else { v >= 0.0 } && v.is_finite();
    match spec {
        CovSpec::Isotropic(s) => {
            if !ok(*s) {
                return Err(Error::Config(format!("{what}: invalid isotropic variance {s}")));
            }
            Ok(DMatrix::identity(dim, dim) * *s)
        }
        CovSpec::Diagonal(v) => {
            if v.len() != dim {
                return Err(Error::Config(format!(
                    "{what}: diagonal has {} entries, expected {dim}",
                    v.len()
                )));
            }
            if !v.iter().all(|&x| ok(x)) {
                return Err(Error::Config(format!("{what}: invalid diagonal entry")));
            }
            Ok(DMatrix::from_diagonal(&DVector::from_column_slice(v)))
        }
        CovSpec::RandomSpd {
            seed,
            cond_cap,
            scale,
        } => {
            if !(*cond_cap >= 1.0 && cond_cap.is_finite()) || !(*scale > 0.0) {
                return Err(Error::Config(format!("{what}: random SPD needs cond_cap >= 1 and scale > 0")));
            }
            let mut rng = ChaCha20Rng::seed_from_u64(*seed);
            let q = random_orthogonal(dim, &mut rng);
            let log_cap = cond_cap.ln();
            let mut lam: Vec<f64> = (0..dim).map(|_| (rng.random::<f64>() * log_cap).exp()).collect();
            let mean = lam.iter().sum::<f64>() / dim as f64;
            for v in &mut lam {
                *v *= scale / mean;
            }
            let d = DMatrix::from_diagonal(&DVector::from_vec(lam));
            Ok(symmetrize(&(&q * d * q.transpose())))
        }
    }
}

/// Speaker and noise covariances of a configuration.
pub fn make_covariances(cfg: &SynthConfig) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    cfg.validate()?;
    let cu = build_covariance(&cfg.cu, cfg.dim, false, "speaker covariance")?;
    let cn = build_covariance(&cfg.cn, cfg.dim, true, "noise covariance")?;
    Ok((cu, cn))
}

/// Square-root factor `L` with `L L^T = C` for a PSD matrix.
fn psd_sqrt(c: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, mut vecs) = sym_eigen_desc(c);
    for (k, mut col) in vecs.column_iter_mut().enumerate() {
        col *= vals[k].max(0.0).sqrt();
    }
    vecs
}

fn gaussian_vec(dim: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Draws a corpus: one `u ~ N(0, C_u)` per speaker, `x = u + n` per utterance.
pub fn generate(cfg: &SynthConfig) -> Result<(EmbeddingSet, GroundTruth)> {
    let (cu, cn) = make_covariances(cfg)?;
    let d = cfg.dim;
    let su = psd_sqrt(&cu);
    let sn = spd_cholesky(&cn, "noise covariance", None)?.l();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    let (offset, fraction) = match cfg.mismatch {
        Mismatch::ChannelShift {
            fraction,
            offset_norm,
            direction_seed,
        } => {
            let norm = offset_norm.unwrap_or_else(|| cn.trace().sqrt());
            let dir = gaussian_vec(d, &mut ChaCha20Rng::seed_from_u64(direction_seed));
            (dir.normalize() * norm, fraction)
        }
        _ => (DVector::zeros(d), 0.0),
    };
    let chi = match cfg.mismatch {
        Mismatch::HeavyTail { dof } => Some((dof, ChiSquared::new(dof).map_err(|e| Error::Config(e.to_string()))?)),
        _ => None,
    };

    let width = (cfg.n_speakers.max(2) - 1).to_string().len().max(4);
    let mut ids = Vec::new();
    let mut speakers = Vec::new();
    let mut rows: Vec<DVector<f64>> = Vec::new();
    for s in 0..cfg.n_speakers {
        let m = match cfg.utts {
            UttCount::Fixed(m) => m,
            UttCount::Range(lo, hi) => rng.random_range(lo..=hi),
        };
        let u = &su * gaussian_vec(d, &mut rng);
        let spk = format!("spk{s:0width$}");
        for k in 0..m {
            let mut n = &sn * gaussian_vec(d, &mut rng);
            if let Some((dof, chi)) = &chi {
                let w: f64 = chi.sample(&mut rng);
                n *= ((dof - 2.0) / w).sqrt();
            }
            let mut x = &u + n;
            if fraction > 0.0 && rng.random::<f64>() < fraction {
                x += &offset;
            }
            ids.push(format!("{spk}-{k:03}"));
            speakers.push(spk.clone());
            rows.push(x);
        }
    }
    let mut vectors = DMatrix::zeros(rows.len(), d);
    for (r, x) in rows.iter().enumerate() {
        vectors.set_row(r, &x.transpose());
    }
    let set = EmbeddingSet::new(ids, speakers, vectors)?;
    Ok((set, GroundTruth { cu, cn }))
}

/// Labeled trials drawn uniformly (with replacement) from the same-speaker and
/// different-speaker pairs of `set`; targets first, then non-targets.
pub fn sample_trials(set: &EmbeddingSet, n_target: usize, n_nontarget: usize, seed: u64) -> Result<TrialList> {
    let sampler = PairSampler::new(set)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let ids = set.ids();
    let mut out = Vec::with_capacity(n_target + n_nontarget);
    for k in 0..n_target + n_nontarget {
        let p = if k < n_target {
            sampler.same(&mut rng)
        } else {
            sampler.different(&mut rng)
        };
        out.push(Trial::new(ids[p.i].clone(), ids[p.j].clone(), Some(p.label)));
    }
    Ok(out)
}

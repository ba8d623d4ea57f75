//! LDA projection and length normalization, the front half of the backend.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::corpus::EmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg::{check_len, fix_column_signs, spd_cholesky, sym_eigen_desc};
use crate::textio::{parse_usize, push_row, read_to_string, write_string, Lines};

/// Diagonal loading of the within-class scatter, relative to its mean diagonal.
pub const WITHIN_REGULARIZATION: f64 = 1e-6;

/// Smallest norm accepted by [`length_normalize`].
pub const MIN_NORM: f64 = 1e-12;

/// Centering plus an `l x d` projection: `h = W^T (x - mean)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LdaTransform {
    pub mean: DVector<f64>,
    pub w: DMatrix<f64>,
}

impl LdaTransform {
    pub fn new(mean: DVector<f64>, w: DMatrix<f64>) -> Result<Self> {
        check_len(&mean, "lda mean", w.nrows())?;
        if w.ncols() == 0 || w.ncols() > w.nrows() {
            return Err(Error::Config(format!(
                "lda output dimension {} must be in 1..={}",
                w.ncols(),
                w.nrows()
            )));
        }
        if !w.iter().chain(mean.iter()).all(|v| v.is_finite()) {
            return Err(Error::Config("lda parameters must be finite".into()));
        }
        Ok(LdaTransform { mean, w })
    }

    pub fn identity(dim: usize) -> Self {
        LdaTransform {
            mean: DVector::zeros(dim),
            w: DMatrix::identity(dim, dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        apply_lda(self, x)
    }

    /// LDA followed by length normalization.
    pub fn pipeline(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        length_normalize(&apply_lda(self, x)?)
    }

    /// Applies the transform (and optionally length normalization) to every row.
    pub fn transform_set(&self, set: &EmbeddingSet, normalize: bool) -> Result<EmbeddingSet> {
        check_len(&self.mean, "embedding dimension", set.dim())?;
        let mut out = DMatrix::zeros(set.len(), self.output_dim());
        for k in 0..set.len() {
            let h = if normalize {
                self.pipeline(&set.vector(k))?
            } else {
                self.apply(&set.vector(k))?
            };
            out.set_row(k, &h.transpose());
        }
        set.with_vectors(out)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("lda {} {}\n", self.input_dim(), self.output_dim());
        push_row(&mut out, self.mean.iter());
        for col in self.w.column_iter() {
            push_row(&mut out, col.iter());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let (n, hdr) = lines.header("lda")?;
        let l = parse_usize(hdr.first(), n, "input dimension")?;
        let d = parse_usize(hdr.get(1), n, "output dimension")?;
        let mean = lines.vector(l)?;
        let w = lines.matrix(d, l)?.transpose();
        lines.finish()?;
        LdaTransform::new(mean, w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_to_string(path)?)
    }
}

/// Within-class and between-class scatter of a labeled set, plus the global mean.
///
/// `S_w = sum_s sum_x (x - mu_s)(x - mu_s)^T / N`,
/// `S_b = sum_s (N_s / N)(mu_s - mu)(mu_s - mu)^T`.
pub fn scatter_matrices(set: &EmbeddingSet) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let l = set.dim();
    let n = set.len() as f64;
    let x = set.vectors();
    let mean = DVector::from_iterator(l, x.column_iter().map(|c| c.sum() / n));
    let mut sw = DMatrix::zeros(l, l);
    let mut sb = DMatrix::zeros(l, l);
    for (_, rows) in set.speaker_groups() {
        let ns = rows.len() as f64;
        let mut mu = DVector::zeros(l);
        for &r in &rows {
            mu += x.row(r).transpose();
        }
        mu /= ns;
        for &r in &rows {
            let c = x.row(r).transpose() - &mu;
            sw.ger(1.0 / n, &c, &c, 1.0);
        }
        let c = &mu - &mean;
        sb.ger(ns / n, &c, &c, 1.0);
    }
    (mean, sw, sb)
}

struct LdaSolution {
    mean: DVector<f64>,
    eigenvalues: DVector<f64>,
    directions: DMatrix<f64>,
}

fn solve_lda(set: &EmbeddingSet) -> Result<LdaSolution> {
    let speakers = set.num_speakers();
    if speakers < 2 {
        return Err(Error::InsufficientClasses(speakers));
    }
    let l = set.dim();
    let (mean, mut sw, sb) = scatter_matrices(set);
    let tw = sw.trace();
    let tb = sb.trace();
    if !(tw > 0.0) && !(tb > 0.0) {
        return Err(Error::DegenerateScatter("all vectors are identical"));
    }
    if !(tw > 0.0) {
        return Err(Error::DegenerateScatter("within-class scatter is zero"));
    }
    if !(tb > 0.0) {
        return Err(Error::DegenerateScatter("between-class scatter is zero"));
    }
    let load = WITHIN_REGULARIZATION * tw / l as f64;
    for k in 0..l {
        sw[(k, k)] += load;
    }
    // S_b w = lambda S_w w  <=>  (L^-1 S_b L^-T) v = lambda v,  w = L^-T v
    let chol = spd_cholesky(&sw, "within-class scatter", None)?;
    let lower = chol.l();
    let half = lower
        .solve_lower_triangular(&sb)
        .ok_or(Error::DegenerateScatter("singular within-class scatter"))?;
    let whitened = lower
        .solve_lower_triangular(&half.transpose())
        .ok_or(Error::DegenerateScatter("singular within-class scatter"))?;
    let (eigenvalues, v) = sym_eigen_desc(&whitened);
    let mut directions = lower
        .transpose()
        .solve_upper_triangular(&v)
        .ok_or(Error::DegenerateScatter("singular within-class scatter"))?;
    fix_column_signs(&mut directions);
    Ok(LdaSolution {
        mean,
        eigenvalues,
        directions,
    })
}

/// Fits a rank-`d` LDA projection maximizing the between/within scatter trace ratio.
///
/// Columns solve `S_b w = lambda S_w w` (descending `lambda`), normalized so that
/// `W^T S_w W = I` for the regularized `S_w`, with the largest-magnitude entry of each
/// column positive.
pub fn fit_lda(set: &EmbeddingSet, d: usize) -> Result<LdaTransform> {
    let l = set.dim();
    if d == 0 || d > l {
        return Err(Error::Config(format!("lda dimension {d} must be in 1..={l}")));
    }
    let sol = solve_lda(set)?;
    let speakers = set.num_speakers();
    if d > speakers - 1 {
        log::warn!(
            "lda dimension {d} exceeds #speakers - 1 = {}; trailing directions carry no between-class variance",
            speakers - 1
        );
    }
    let w = sol.directions.columns(0, d).into_owned();
    LdaTransform::new(sol.mean, w)
}

/// All `l` generalized eigenvalues of the (regularized) LDA problem, descending.
pub fn lda_eigenvalues(set: &EmbeddingSet) -> Result<DVector<f64>> {
    Ok(solve_lda(set)?.eigenvalues)
}

pub fn apply_lda(t: &LdaTransform, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_len(x, "lda input", t.input_dim())?;
    Ok(t.w.tr_mul(&(x - &t.mean)))
}

/// Scales `h` to unit Euclidean norm.
pub fn length_normalize(h: &DVector<f64>) -> Result<DVector<f64>> {
    let n = h.norm();
    if !(n >= MIN_NORM) {
        return Err(Error::ZeroVector);
    }
    Ok(h / n)
}

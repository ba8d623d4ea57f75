//! Joint Bayesian generative model.
//!
//! An embedding is modeled as `x = u + n` with a speaker term `u ~ N(0, C_u)` shared by
//! all utterances of a speaker and an utterance term `n ~ N(0, C_n)`. The verification
//! score of a pair is the quadratic form
//!
//! ```text
//! r(x_i, x_j) = x_i^T A x_i + x_j^T A x_j - 2 x_i^T G x_j
//! A = (C_u + C_n)^-1 - [(C_u + C_n) - C_u (C_u + C_n)^-1 C_u]^-1
//! G = -(2 C_u + C_n)^-1 C_u C_n^-1
//! ```
//!
//! which equals twice the Gaussian log-likelihood ratio of the pair with its constant
//! term dropped. Both `A` and `G` are negative semi-definite and are stored in factored
//! form `A = -P_A P_A^T`, `G = -P_G P_G^T` as well.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{
    check_len, check_square, fix_column_signs, log_det, max_abs_eigenvalue, mean_diag,
    spd_cholesky, spd_inverse, sym_eigen_desc, symmetrize,
};
use crate::textio::{parse_usize, push_matrix_rows, read_to_string, write_string, Lines};

/// Relative tolerance for the factorization invariants.
pub const FACTOR_TOL: f64 = 1e-8;
/// Eigenvalues of `-M` below this fraction of the largest are clamped to zero.
pub const CLAMP_REL: f64 = 1e-10;
/// Relative floor added to the diagonal of an initial covariance that is not PD.
const INIT_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct JbModel {
    pub cu: DMatrix<f64>,
    pub cn: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub p_a: DMatrix<f64>,
    pub p_g: DMatrix<f64>,
}

impl JbModel {
    /// Builds the scoring matrices and their factors from the two covariances.
    pub fn from_covariances(cu: DMatrix<f64>, cn: DMatrix<f64>) -> Result<Self> {
        let d = cu.nrows();
        check_square(&cu, "speaker covariance", d)?;
        check_square(&cn, "noise covariance", d)?;
        let cu = symmetrize(&cu);
        let cn = symmetrize(&cn);
        let scale = max_abs_eigenvalue(&cu);
        let (eig, _) = sym_eigen_desc(&cu);
        if eig.iter().any(|&v| v < -1e-10 * scale.max(f64::MIN_POSITIVE)) {
            return Err(Error::IllConditioned {
                what: "speaker covariance (not PSD)",
                iteration: None,
            });
        }
        let (a, g) = derive_ag(&cu, &cn)?;
        let p_a = factorize_nsd(&a)?;
        let p_g = factorize_nsd(&g)?;
        Ok(JbModel {
            cu,
            cn,
            a,
            g,
            p_a,
            p_g,
        })
    }

    pub fn dim(&self) -> usize {
        self.cu.nrows()
    }

    pub fn score(&self, h_i: &DVector<f64>, h_j: &DVector<f64>) -> Result<f64> {
        score_llr(self, h_i, h_j)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("jb {}\n", self.dim());
        for m in [&self.cu, &self.cn, &self.p_a, &self.p_g] {
            push_matrix_rows(&mut out, m);
        }
        out
    }

    /// Parses the text form; `A` and `G` are recomputed and checked against the factors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let (n, hdr) = lines.header("jb")?;
        let d = parse_usize(hdr.first(), n, "dimension")?;
        let cu = lines.matrix(d, d)?;
        let cn = lines.matrix(d, d)?;
        let p_a = lines.matrix(d, d)?;
        let p_g = lines.matrix(d, d)?;
        lines.finish()?;
        let (a, g) = derive_ag(&symmetrize(&cu), &symmetrize(&cn))?;
        for (m, p) in [(&a, &p_a), (&g, &p_g)] {
            let resid = (m + p * p.transpose()).norm();
            if resid > FACTOR_TOL * m.norm().max(1.0) {
                return Err(Error::Config(format!(
                    "stored factor does not reproduce the scoring matrix (residual {resid:e})"
                )));
            }
        }
        Ok(JbModel {
            cu: symmetrize(&cu),
            cn: symmetrize(&cn),
            a,
            g,
            p_a,
            p_g,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_to_string(path)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Threshold on both the relative parameter change and the relative
    /// log-likelihood change.
    pub rel_tol: f64,
    pub verbose: bool,
    /// Include the posterior covariance terms in the M-step (exact EM). When false the
    /// cheaper point-estimate variant is used, which is not guaranteed to be monotone.
    pub posterior_cov: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 200,
            rel_tol: 1e-6,
            verbose: false,
            posterior_cov: true,
        }
    }
}

impl EmConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("rel_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Per-iteration record of an EM run.
#[derive(Clone, Debug, Default)]
pub struct EmTrace {
    /// Total marginal log-likelihood at the initial point and after every iteration.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Sufficient statistics of a labeled data matrix.
struct SpeakerStats {
    dim: usize,
    total: usize,
    /// (utterance count, sum vector) per speaker, in order of first appearance.
    sums: Vec<(usize, DVector<f64>)>,
    /// `sum_i sum_j (x_ij - xbar_i)(x_ij - xbar_i)^T`
    within: DMatrix<f64>,
}

impl SpeakerStats {
    fn new(vectors: &DMatrix<f64>, speakers: &[String]) -> Result<Self> {
        if speakers.len() != vectors.nrows() {
            return Err(Error::Shape {
                what: "speaker labels",
                expected: vectors.nrows(),
                found: speakers.len(),
            });
        }
        let d = vectors.ncols();
        let mut slot: BTreeMap<&str, usize> = BTreeMap::new();
        let mut sums: Vec<(usize, DVector<f64>)> = Vec::new();
        let mut scatter = DMatrix::zeros(d, d);
        for (r, spk) in speakers.iter().enumerate() {
            let k = *slot.entry(spk.as_str()).or_insert_with(|| {
                sums.push((0, DVector::zeros(d)));
                sums.len() - 1
            });
            let x = vectors.row(r).transpose();
            scatter.ger(1.0, &x, &x, 1.0);
            sums[k].0 += 1;
            sums[k].1 += x;
        }
        let mut within = scatter;
        for (m, s) in &sums {
            within.ger(-1.0 / *m as f64, s, s, 1.0);
        }
        Ok(SpeakerStats {
            dim: d,
            total: vectors.nrows(),
            sums,
            within: symmetrize(&within),
        })
    }

    fn distinct_counts(&self) -> Vec<usize> {
        let mut ms: Vec<usize> = self.sums.iter().map(|(m, _)| *m).collect();
        ms.sort_unstable();
        ms.dedup();
        ms
    }
}

fn log_likelihood_stats(
    cu: &DMatrix<f64>,
    cn: &DMatrix<f64>,
    stats: &SpeakerStats,
    iteration: Option<usize>,
) -> Result<f64> {
    let d = stats.dim as f64;
    let cn_chol = spd_cholesky(cn, "noise covariance", iteration)?;
    let cn_logdet = log_det(&cn_chol);
    let mut total = stats.total as f64 * d * (2.0 * PI).ln();
    total += (cn_chol.inverse() * &stats.within).trace();
    let mut per_count = BTreeMap::new();
    for m in stats.distinct_counts() {
        let k = cn + cu * m as f64;
        per_count.insert(m, spd_cholesky(&k, "block covariance", iteration)?);
    }
    for (m, s) in &stats.sums {
        let chol = &per_count[m];
        let mf = *m as f64;
        total += (mf - 1.0) * cn_logdet + log_det(chol);
        total += s.dot(&chol.solve(s)) / mf;
    }
    Ok(-0.5 * total)
}

/// Total marginal log-likelihood `sum_i log p(X_i)` of the per-speaker stacked
/// observations under the model's covariances.
pub fn jb_log_likelihood(model: &JbModel, vectors: &DMatrix<f64>, speakers: &[String]) -> Result<f64> {
    if vectors.ncols() != model.dim() {
        return Err(Error::Shape {
            what: "embedding dimension",
            expected: model.dim(),
            found: vectors.ncols(),
        });
    }
    let stats = SpeakerStats::new(vectors, speakers)?;
    log_likelihood_stats(&model.cu, &model.cn, &stats, None)
}

fn floor_pd(m: DMatrix<f64>, fallback_scale: f64) -> DMatrix<f64> {
    if nalgebra::Cholesky::new(m.clone()).is_some() {
        return m;
    }
    let scale = match mean_diag(&m) {
        s if s > 0.0 => s,
        _ => fallback_scale,
    };
    let mut out = m;
    for k in 0..out.nrows() {
        out[(k, k)] += INIT_FLOOR * scale;
    }
    out
}

fn initial_covariances(stats: &SpeakerStats) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = stats.dim;
    let ns = stats.sums.len() as f64;
    let means: Vec<DVector<f64>> = stats.sums.iter().map(|(m, s)| s / *m as f64).collect();
    let grand = means.iter().fold(DVector::zeros(d), |acc, m| acc + m) / ns;
    let mut cu = DMatrix::zeros(d, d);
    for m in &means {
        let c = m - &grand;
        cu.ger(1.0 / ns, &c, &c, 1.0);
    }
    let dof = (stats.total - stats.sums.len()) as f64;
    let cn = floor_pd(&stats.within / dof, 1.0);
    let cu = floor_pd(cu, mean_diag(&cn));
    (cu, cn)
}

/// Estimates `(C_u, C_n)` by EM on centered data. See [`fit_jb_em_traced`].
pub fn fit_jb_em(vectors: &DMatrix<f64>, speakers: &[String], cfg: &EmConfig) -> Result<JbModel> {
    fit_jb_em_traced(vectors, speakers, cfg).map(|(m, _)| m)
}

/// EM for the two-covariance model.
///
/// E-step for a speaker with `m` utterances summing to `s`:
/// `K = C_n + m C_u`, posterior mean `mu = C_u K^-1 s`, posterior covariance
/// `V = C_u - m C_u K^-1 C_u` (the same quantities as `(C_u^-1 + m C_n^-1)^-1` without
/// inverting `C_u`). M-step: `C_u = mean_i(mu_i mu_i^T + V_i)`,
/// `C_n = (1/N) sum_ij ((x_ij - mu_i)(x_ij - mu_i)^T + V_i)`.
pub fn fit_jb_em_traced(
    vectors: &DMatrix<f64>,
    speakers: &[String],
    cfg: &EmConfig,
) -> Result<(JbModel, EmTrace)> {
    cfg.validate()?;
    let stats = SpeakerStats::new(vectors, speakers)?;
    if stats.sums.iter().all(|(m, _)| *m < 2) {
        return Err(Error::Unidentifiable);
    }
    let d = stats.dim;
    let total_sum = stats.sums.iter().fold(DVector::zeros(d), |acc, (_, s)| acc + s);
    let mean_norm = (total_sum / stats.total as f64).norm();
    let avg_norm = vectors.row_iter().map(|r| r.norm()).sum::<f64>() / stats.total as f64;
    if mean_norm > 1e-2 * avg_norm {
        log::warn!("jb input is not centered (global mean norm {mean_norm:.3e})");
    }

    let (mut cu, mut cn) = initial_covariances(&stats);
    let mut trace = EmTrace::default();
    let mut ll = log_likelihood_stats(&cu, &cn, &stats, Some(0))?;
    trace.log_likelihoods.push(ll);

    // scatter of the raw data, sum_ij x x^T
    let mut raw_scatter = stats.within.clone();
    for (m, s) in &stats.sums {
        raw_scatter.ger(1.0 / *m as f64, s, s, 1.0);
    }

    for iter in 1..=cfg.max_iters {
        let mut posterior_cov = BTreeMap::new();
        let mut gain = BTreeMap::new();
        for m in stats.distinct_counts() {
            let k = &cn + &cu * m as f64;
            let k_inv = spd_inverse(&k, "block covariance", Some(iter))?;
            let cu_kinv = &cu * &k_inv;
            let v = symmetrize(&(&cu - &cu_kinv * &cu * m as f64));
            posterior_cov.insert(m, v);
            gain.insert(m, cu_kinv);
        }

        let mut new_cu = DMatrix::zeros(d, d);
        let mut new_cn = raw_scatter.clone();
        for (m, s) in &stats.sums {
            let mu = &gain[m] * s;
            let mf = *m as f64;
            new_cu.ger(1.0, &mu, &mu, 1.0);
            new_cn.ger(-1.0, s, &mu, 1.0);
            new_cn.ger(-1.0, &mu, s, 1.0);
            new_cn.ger(mf, &mu, &mu, 1.0);
            if cfg.posterior_cov {
                new_cu += &posterior_cov[m];
                new_cn += &posterior_cov[m] * mf;
            }
        }
        new_cu = symmetrize(&(new_cu / stats.sums.len() as f64));
        new_cn = symmetrize(&(new_cn / stats.total as f64));

        let new_ll = log_likelihood_stats(&new_cu, &new_cn, &stats, Some(iter))?;
        let dparam = ((&new_cu - &cu).norm() / cu.norm().max(f64::MIN_POSITIVE))
            .max((&new_cn - &cn).norm() / cn.norm().max(f64::MIN_POSITIVE));
        let dll = (new_ll - ll).abs() / ll.abs().max(f64::MIN_POSITIVE);
        if cfg.posterior_cov && new_ll < ll - 1e-8 {
            log::warn!("em log-likelihood decreased at iteration {iter}: {ll} -> {new_ll}");
        }
        if cfg.verbose {
            log::info!("em iteration {iter}: log-likelihood {new_ll:.6} (rel param change {dparam:.3e})");
        }
        cu = new_cu;
        cn = new_cn;
        ll = new_ll;
        trace.log_likelihoods.push(ll);
        trace.iterations = iter;
        if dparam < cfg.rel_tol && dll < cfg.rel_tol {
            trace.converged = true;
            break;
        }
    }
    let model = JbModel::from_covariances(cu, cn)?;
    Ok((model, trace))
}

/// Scoring matrices `(A, G)` of the pair log-likelihood ratio.
pub fn derive_ag(cu: &DMatrix<f64>, cn: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = cu.nrows();
    check_square(cu, "speaker covariance", d)?;
    check_square(cn, "noise covariance", d)?;
    let cn_inv = spd_inverse(cn, "noise covariance", None)?;
    let total = cu + cn;
    let total_inv = spd_inverse(&total, "total covariance", None)?;
    let schur = &total - cu * &total_inv * cu;
    let a = symmetrize(&(&total_inv - spd_inverse(&symmetrize(&schur), "conditional covariance", None)?));
    let two_cu_cn = cu * 2.0 + cn;
    let chol = spd_cholesky(&symmetrize(&two_cu_cn), "2 C_u + C_n", None)?;
    let g = -chol.solve(&(cu * &cn_inv));
    Ok((a, symmetrize(&g)))
}

/// Factor `P` with `M = -P P^T` for a symmetric negative semi-definite `M`.
///
/// Always returns `d` columns; directions whose eigenvalue falls below
/// `1e-10 * lambda_max` are zero columns.
pub fn factorize_nsd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    check_square(m, "nsd matrix", d)?;
    let (vals, vecs) = sym_eigen_desc(&(-symmetrize(m)));
    let norm = vals.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    // eigenvalues of -M must be >= -tol * ||M||
    let lowest = vals.iter().copied().fold(f64::INFINITY, f64::min);
    if d > 0 && lowest < -FACTOR_TOL * norm {
        return Err(Error::NotNsd(-lowest));
    }
    let top = vals.iter().copied().fold(0.0f64, f64::max);
    let mut p = vecs;
    for (k, mut col) in p.column_iter_mut().enumerate() {
        let lam = vals[k];
        let scale = if top > 0.0 && lam > CLAMP_REL * top { lam.sqrt() } else { 0.0 };
        col *= scale;
    }
    fix_column_signs(&mut p);
    Ok(p)
}

/// `h_i^T A h_i + h_j^T A h_j - 2 h_i^T G h_j`.
pub fn score_llr(model: &JbModel, h_i: &DVector<f64>, h_j: &DVector<f64>) -> Result<f64> {
    check_len(h_i, "score input", model.dim())?;
    check_len(h_j, "score input", model.dim())?;
    Ok(h_i.dot(&(&model.a * h_i)) + h_j.dot(&(&model.a * h_j)) - 2.0 * h_i.dot(&(&model.g * h_j)))
}

/// `2 g_i^T g_j - a_i^T a_i - a_j^T a_j` with `a = P_A^T h`, `g = P_G^T h`.
pub fn score_llr_factored(
    p_a: &DMatrix<f64>,
    p_g: &DMatrix<f64>,
    h_i: &DVector<f64>,
    h_j: &DVector<f64>,
) -> Result<f64> {
    let d = p_a.nrows();
    if p_g.nrows() != d {
        return Err(Error::Shape {
            what: "P_G rows",
            expected: d,
            found: p_g.nrows(),
        });
    }
    if p_g.ncols() != p_a.ncols() {
        return Err(Error::Shape {
            what: "factor columns",
            expected: p_a.ncols(),
            found: p_g.ncols(),
        });
    }
    check_len(h_i, "score input", d)?;
    check_len(h_j, "score input", d)?;
    let a_i = p_a.tr_mul(h_i);
    let a_j = p_a.tr_mul(h_j);
    let g_i = p_g.tr_mul(h_i);
    let g_j = p_g.tr_mul(h_j);
    Ok(2.0 * g_i.dot(&g_j) - a_i.norm_squared() - a_j.norm_squared())
}

fn log_gaussian(z: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = spd_cholesky(cov, "pair covariance", None)?;
    let n = z.len() as f64;
    Ok(-0.5 * (n * (2.0 * PI).ln() + log_det(&chol) + z.dot(&chol.solve(z))))
}

/// `log N([h_i; h_j]; 0, cov_S) - log N([h_i; h_j]; 0, cov_D)` by direct evaluation of
/// the `2d x 2d` Gaussian densities.
pub fn oracle_llr_density(
    cu: &DMatrix<f64>,
    cn: &DMatrix<f64>,
    h_i: &DVector<f64>,
    h_j: &DVector<f64>,
) -> Result<f64> {
    let d = cu.nrows();
    check_square(cu, "speaker covariance", d)?;
    check_square(cn, "noise covariance", d)?;
    check_len(h_i, "score input", d)?;
    check_len(h_j, "score input", d)?;
    let total = cu + cn;
    let mut cov_s = DMatrix::zeros(2 * d, 2 * d);
    let mut cov_d = DMatrix::zeros(2 * d, 2 * d);
    for (r, c) in [(0, 0), (d, d)] {
        cov_s.view_mut((r, c), (d, d)).copy_from(&total);
        cov_d.view_mut((r, c), (d, d)).copy_from(&total);
    }
    cov_s.view_mut((0, d), (d, d)).copy_from(cu);
    cov_s.view_mut((d, 0), (d, d)).copy_from(cu);
    let mut z = DVector::zeros(2 * d);
    z.rows_mut(0, d).copy_from(h_i);
    z.rows_mut(d, d).copy_from(h_j);
    Ok(log_gaussian(&z, &cov_s)? - log_gaussian(&z, &cov_d)?)
}

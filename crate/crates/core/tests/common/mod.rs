//! Independent reference implementations used as test oracles.
#![allow(dead_code, clippy::needless_range_loop)]

use jbsv::hybrid::{batch_loss, grad, LossConfig, Pair, Param, SiameseModel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn randn(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn randv(dim: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random SPD matrix `B B^T / d + floor I`.
pub fn random_spd(d: usize, floor: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let b = randn(d, d, rng);
    let m = &b * b.transpose() / d as f64;
    let m = (&m + m.transpose()) * 0.5;
    m + DMatrix::identity(d, d) * floor
}

/// Inverse through LU, deliberately not the Cholesky route used by the library.
pub fn lu_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().lu().try_inverse().expect("invertible")
}

/// `(A, G)` read off the inverse of the joint same-speaker covariance:
/// `inv(cov_S) = [[X, Y], [Y, X]]`, `G = Y`, `A = inv(C_u + C_n) - X`.
pub fn ag_by_block_inverse(cu: &DMatrix<f64>, cn: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = cu.nrows();
    let total = cu + cn;
    let mut cov = DMatrix::zeros(2 * d, 2 * d);
    cov.view_mut((0, 0), (d, d)).copy_from(&total);
    cov.view_mut((d, d), (d, d)).copy_from(&total);
    cov.view_mut((0, d), (d, d)).copy_from(cu);
    cov.view_mut((d, 0), (d, d)).copy_from(cu);
    let inv = lu_inverse(&cov);
    let x = inv.view((0, 0), (d, d)).into_owned();
    let y = inv.view((0, d), (d, d)).into_owned();
    (lu_inverse(&total) - x, y)
}

/// Log density of `N(0, cov)` at `z` through an LU determinant and solve.
pub fn log_mvn(z: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let lu = cov.clone().lu();
    let det = lu.determinant();
    assert!(det > 0.0);
    let sol = lu.solve(z).expect("solvable");
    -0.5 * (z.len() as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln() + z.dot(&sol))
}

/// Total log-likelihood of grouped data by stacking every speaker's utterances into
/// one `m d` vector with covariance `I (x) C_n + 1 1^T (x) C_u`.
pub fn stacked_log_likelihood(cu: &DMatrix<f64>, cn: &DMatrix<f64>, groups: &[Vec<DVector<f64>>]) -> f64 {
    let d = cu.nrows();
    groups
        .iter()
        .map(|g| {
            let m = g.len();
            let mut cov = DMatrix::zeros(m * d, m * d);
            let mut z = DVector::zeros(m * d);
            for a in 0..m {
                z.rows_mut(a * d, d).copy_from(&g[a]);
                for b in 0..m {
                    let block = if a == b { cu + cn } else { cu.clone() };
                    cov.view_mut((a * d, b * d), (d, d)).copy_from(&block);
                }
            }
            log_mvn(&z, &cov)
        })
        .sum()
}

/// Exhaustive threshold sweep by direct counting at every candidate threshold.
pub fn brute_sweep(tar: &[f64], non: &[f64]) -> Vec<(f64, f64)> {
    let mut vals: Vec<f64> = tar.iter().chain(non).copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY];
    for w in vals.windows(2) {
        thresholds.push(0.5 * (w[0] + w[1]));
    }
    thresholds.push(f64::INFINITY);
    thresholds
        .iter()
        .map(|&t| {
            let miss = tar.iter().filter(|&&s| s < t).count() as f64 / tar.len() as f64;
            let fa = non.iter().filter(|&&s| s >= t).count() as f64 / non.len() as f64;
            (miss, fa)
        })
        .collect()
}

pub fn brute_eer(tar: &[f64], non: &[f64]) -> f64 {
    let pts = brute_sweep(tar, non);
    let k = pts.iter().position(|&(m, f)| m >= f).expect("crossing exists");
    let (m1, f1) = pts[k];
    if m1 == f1 {
        return m1;
    }
    let (m0, f0) = pts[k - 1];
    let t = -(m0 - f0) / ((m1 - f1) - (m0 - f0));
    m0 + t * (m1 - m0)
}

pub fn brute_min_dcf(tar: &[f64], non: &[f64], p: f64, c_miss: f64, c_fa: f64) -> f64 {
    brute_sweep(tar, non)
        .iter()
        .map(|&(m, f)| p * c_miss * m + (1.0 - p) * c_fa * f)
        .fold(f64::INFINITY, f64::min)
}

/// Central finite differences of the batch loss for every coordinate of every
/// parameter tensor; returns `(param, relative error)`.
pub fn fd_check(
    model: &SiameseModel,
    vectors: &DMatrix<f64>,
    batch: &[Pair],
    cfg: &LossConfig,
    step: f64,
) -> Vec<(Param, f64)> {
    let (_, g) = grad(model, vectors, batch, cfg, &[]).unwrap();
    let n_tensors = model.tensors().len();
    let mut out = Vec::new();
    for t in 0..n_tensors {
        let (name, len) = {
            let ts = model.tensors();
            (ts[t].0, ts[t].1.len())
        };
        let analytic = g.get(name).unwrap().to_vec();
        let mut numeric = vec![0.0; len];
        for k in 0..len {
            let mut plus = model.clone();
            plus.tensors_mut()[t].1[k] += step;
            let mut minus = model.clone();
            minus.tensors_mut()[t].1[k] -= step;
            let lp = batch_loss(&plus, vectors, batch, cfg).unwrap();
            let lm = batch_loss(&minus, vectors, batch, cfg).unwrap();
            numeric[k] = (lp - lm) / (2.0 * step);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = na.max(nn);
        out.push((name, if scale == 0.0 { 0.0 } else { diff / scale }));
    }
    out
}

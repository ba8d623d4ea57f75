//! Detection metrics: EER, minimum DCF, DET curve and per-class score histograms.
//!
//! All statistics are computed over one threshold sweep: `-inf`, the midpoints between
//! consecutive distinct sorted scores, and `+inf`. A trial is accepted as "same
//! speaker" iff `score >= threshold`.

use std::fmt::Write as _;

use crate::corpus::ScoreSet;
use crate::error::{Error, Result};
use crate::textio::fmt_f64;

/// One operating point of the sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetPoint {
    pub p_fa: f64,
    pub p_miss: f64,
    pub threshold: f64,
}

fn sweep(tar: &[f64], non: &[f64]) -> Result<Vec<DetPoint>> {
    if tar.is_empty() || non.is_empty() {
        return Err(Error::DegenerateLabels);
    }
    let mut all: Vec<(f64, bool)> = tar
        .iter()
        .map(|&s| (s, true))
        .chain(non.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let nt = tar.len() as f64;
    let nn = non.len() as f64;
    let mut points = Vec::with_capacity(all.len() + 1);
    points.push(DetPoint {
        p_fa: 1.0,
        p_miss: 0.0,
        threshold: f64::NEG_INFINITY,
    });
    // counts of scores strictly below the current threshold
    let mut miss = 0usize;
    let mut below_non = 0usize;
    let mut k = 0;
    while k < all.len() {
        let s = all[k].0;
        while k < all.len() && all[k].0 == s {
            if all[k].1 {
                miss += 1;
            } else {
                below_non += 1;
            }
            k += 1;
        }
        let threshold = if k < all.len() {
            0.5 * (s + all[k].0)
        } else {
            f64::INFINITY
        };
        points.push(DetPoint {
            p_fa: (non.len() - below_non) as f64 / nn,
            p_miss: miss as f64 / nt,
            threshold,
        });
    }
    Ok(points)
}

/// Linear interpolation of the miss/false-alarm crossing between two sweep points.
pub(crate) fn interpolate_crossing(lo: (f64, f64), hi: (f64, f64)) -> (f64, f64) {
    // lo/hi are (p_miss, p_fa) with p_miss - p_fa < 0 at lo and > 0 at hi
    let d_lo = lo.0 - lo.1;
    let d_hi = hi.0 - hi.1;
    let t = -d_lo / (d_hi - d_lo);
    (t, lo.0 + t * (hi.0 - lo.0))
}

/// Equal error rate and the threshold where it is reached.
pub fn compute_eer(scores: &ScoreSet) -> Result<(f64, f64)> {
    let (tar, non) = scores.split_by_label()?;
    eer_from_split(&tar, &non)
}

pub fn eer_from_split(tar: &[f64], non: &[f64]) -> Result<(f64, f64)> {
    let pts = sweep(tar, non)?;
    for k in 1..pts.len() {
        let p = pts[k];
        let diff = p.p_miss - p.p_fa;
        if diff == 0.0 {
            return Ok((p.p_miss, p.threshold));
        }
        if diff > 0.0 {
            let q = pts[k - 1];
            let (t, eer) = interpolate_crossing((q.p_miss, q.p_fa), (p.p_miss, p.p_fa));
            let threshold = match (q.threshold.is_finite(), p.threshold.is_finite()) {
                (true, true) => q.threshold + t * (p.threshold - q.threshold),
                (false, _) => p.threshold,
                (_, false) => q.threshold,
            };
            return Ok((eer, threshold));
        }
    }
    unreachable!("sweep ends at p_miss = 1, p_fa = 0")
}

/// Detection cost weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcfParams {
    pub p_tar: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl DcfParams {
    pub fn new(p_tar: f64, c_miss: f64, c_fa: f64) -> Result<Self> {
        if !(p_tar > 0.0 && p_tar < 1.0) {
            return Err(Error::Config(format!("p_tar {p_tar} must be in (0, 1)")));
        }
        if !(c_miss >= 0.0 && c_fa >= 0.0) || c_miss + c_fa <= 0.0 {
            return Err(Error::InvalidCost);
        }
        Ok(DcfParams { p_tar, c_miss, c_fa })
    }

    pub fn cost(&self, p_miss: f64, p_fa: f64) -> f64 {
        self.p_tar * self.c_miss * p_miss + (1.0 - self.p_tar) * self.c_fa * p_fa
    }

    /// Cost of the better of the two trivial (always accept / always reject) systems.
    pub fn default_cost(&self) -> f64 {
        (self.p_tar * self.c_miss).min((1.0 - self.p_tar) * self.c_fa)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinDcf {
    pub raw: f64,
    pub normalized: f64,
    pub threshold: f64,
}

pub fn compute_min_dcf(scores: &ScoreSet, p_tar: f64, c_miss: f64, c_fa: f64) -> Result<MinDcf> {
    let params = DcfParams::new(p_tar, c_miss, c_fa)?;
    let (tar, non) = scores.split_by_label()?;
    min_dcf_from_split(&tar, &non, &params)
}

pub fn min_dcf_from_split(tar: &[f64], non: &[f64], params: &DcfParams) -> Result<MinDcf> {
    let pts = sweep(tar, non)?;
    let mut best = pts[0];
    let mut best_cost = params.cost(best.p_miss, best.p_fa);
    for p in &pts[1..] {
        let c = params.cost(p.p_miss, p.p_fa);
        // strict comparison keeps the smallest threshold on ties
        if c < best_cost {
            best_cost = c;
            best = *p;
        }
    }
    let norm = params.default_cost();
    Ok(MinDcf {
        raw: best_cost,
        normalized: if norm > 0.0 { best_cost / norm } else { 0.0 },
        threshold: best.threshold,
    })
}

/// DET curve, from `(P_fa = 1, P_miss = 0)` at `-inf` to `(0, 1)` at `+inf`.
pub fn det_curve(scores: &ScoreSet) -> Result<Vec<DetPoint>> {
    let (tar, non) = scores.split_by_label()?;
    sweep(&tar, &non)
}

pub fn det_from_split(tar: &[f64], non: &[f64]) -> Result<Vec<DetPoint>> {
    sweep(tar, non)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `n_bins + 1` shared edges.
    pub edges: Vec<f64>,
    pub same: Vec<usize>,
    pub different: Vec<usize>,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count_same,count_diff\n");
        for k in 0..self.same.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                fmt_f64(self.edges[k]),
                fmt_f64(self.edges[k + 1]),
                self.same[k],
                self.different[k]
            );
        }
        out
    }
}

/// Per-class score histograms over shared, equal-width bins spanning the score range.
pub fn score_histograms(scores: &ScoreSet, n_bins: usize) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let (tar, non) = scores.split_by_label()?;
    if tar.is_empty() || non.is_empty() {
        return Err(Error::DegenerateLabels);
    }
    let lo = tar.iter().chain(&non).copied().fold(f64::INFINITY, f64::min);
    let mut hi = tar.iter().chain(&non).copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1e-9;
    }
    let width = (hi - lo) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins)
        .map(|k| if k == n_bins { hi } else { lo + k as f64 * width })
        .collect();
    let bin = |s: f64| (((s - lo) / width).floor() as usize).min(n_bins - 1);
    let mut same = vec![0; n_bins];
    let mut different = vec![0; n_bins];
    for s in tar {
        same[bin(s)] += 1;
    }
    for s in non {
        different[bin(s)] += 1;
    }
    Ok(Histogram {
        edges,
        same,
        different,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DcfEntry {
    pub params: DcfParams,
    pub min_dcf: MinDcf,
}

/// EER, minDCF at each requested operating point, and the DET curve.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: Vec<DcfEntry>,
    pub det: Vec<DetPoint>,
}

impl EvalReport {
    pub fn compute(scores: &ScoreSet, operating_points: &[DcfParams]) -> Result<Self> {
        let (tar, non) = scores.split_by_label()?;
        let (eer, eer_threshold) = eer_from_split(&tar, &non)?;
        let min_dcf = operating_points
            .iter()
            .map(|p| {
                Ok(DcfEntry {
                    params: *p,
                    min_dcf: min_dcf_from_split(&tar, &non, p)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(EvalReport {
            eer,
            eer_threshold,
            min_dcf,
            det: sweep(&tar, &non)?,
        })
    }

    /// `EER=... minDCF(0.01)=... minDCF(0.001)=...` with normalized minDCF values.
    pub fn summary(&self) -> String {
        let mut out = format!("EER={:.6}", self.eer);
        for e in &self.min_dcf {
            let _ = write!(out, " minDCF({})={:.6}", e.params.p_tar, e.min_dcf.normalized);
        }
        out
    }

    pub fn det_csv(&self) -> String {
        let mut out = String::from("p_fa,p_miss,threshold\n");
        for p in &self.det {
            let _ = writeln!(out, "{},{},{}", fmt_f64(p.p_fa), fmt_f64(p.p_miss), p.threshold);
        }
        out
    }
}

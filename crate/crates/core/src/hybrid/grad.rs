use nalgebra::{DMatrix, DVector};

use crate::corpus::Label;
use crate::error::{Error, Result};

use super::loss::{loss_and_dz, LossConfig};
use super::model::{Embedded, Head, Param, SiameseModel};
use super::sampler::Pair;

/// Gradient of a loss, laid out exactly like the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(SiameseModel);

impl Gradients {
    pub fn zeros_like(model: &SiameseModel) -> Self {
        Gradients(model.zeros_like())
    }

    /// Wraps explicit values laid out as a model.
    pub fn from_values(values: SiameseModel) -> Self {
        Gradients(values)
    }

    pub fn tensors(&self) -> Vec<(Param, &[f64])> {
        self.0.tensors()
    }

    pub fn get(&self, p: Param) -> Option<&[f64]> {
        self.0.tensors().into_iter().find(|(q, _)| *q == p).map(|(_, t)| t)
    }

    /// The gradient viewed as a model (W, P_A, ... hold partial derivatives).
    pub fn as_model(&self) -> &SiameseModel {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

struct Forward {
    e_i: Embedded,
    e_j: Embedded,
    raw: f64,
}

fn row(vectors: &DMatrix<f64>, k: usize) -> Result<DVector<f64>> {
    if k >= vectors.nrows() {
        return Err(Error::Shape {
            what: "trial row index",
            expected: vectors.nrows(),
            found: k,
        });
    }
    Ok(vectors.row(k).transpose())
}

fn forward_all(model: &SiameseModel, vectors: &DMatrix<f64>, batch: &[Pair]) -> Result<Vec<Forward>> {
    batch
        .iter()
        .map(|p| {
            let e_i = model.embed(&row(vectors, p.i)?)?;
            let e_j = model.embed(&row(vectors, p.j)?)?;
            let raw = model.head_raw(&e_i.unit, &e_j.unit);
            Ok(Forward { e_i, e_j, raw })
        })
        .collect()
}

fn labels(batch: &[Pair]) -> Vec<Label> {
    batch.iter().map(|p| p.label).collect()
}

/// Loss of `model` on a batch of trials given as row indices into `vectors`.
pub fn batch_loss(model: &SiameseModel, vectors: &DMatrix<f64>, batch: &[Pair], cfg: &LossConfig) -> Result<f64> {
    let fw = forward_all(model, vectors, batch)?;
    let z: Vec<f64> = fw.iter().map(|f| model.logit_from_raw(f.raw)).collect();
    Ok(loss_and_dz(&z, &labels(batch), cfg)?.0)
}

/// Backpropagates `du` (gradient w.r.t. the unit vector) through length normalization
/// and the projection, accumulating into `gw`.
fn trunk_backward(gw: &mut DMatrix<f64>, e: &Embedded, du: &DVector<f64>) {
    let dh = (du - &e.unit * e.unit.dot(du)) / e.norm;
    gw.ger(1.0, &e.centered, &dh, 1.0);
}

/// Loss and its exact gradient w.r.t. every parameter; frozen parameters get zero.
pub fn grad(
    model: &SiameseModel,
    vectors: &DMatrix<f64>,
    batch: &[Pair],
    cfg: &LossConfig,
    frozen: &[Param],
) -> Result<(f64, Gradients)> {
    if vectors.ncols() != model.input_dim() {
        return Err(Error::Shape {
            what: "embedding dimension",
            expected: model.input_dim(),
            found: vectors.ncols(),
        });
    }
    let fw = forward_all(model, vectors, batch)?;
    let z: Vec<f64> = fw.iter().map(|f| model.logit_from_raw(f.raw)).collect();
    let (value, dz) = loss_and_dz(&z, &labels(batch), cfg)?;

    let mut g = model.zeros_like();
    let mut gw = DMatrix::zeros(model.input_dim(), model.output_dim());
    match (&model.head, &mut g.head) {
        (
            Head::TwoBranch {
                p_a, p_g, alpha, ..
            },
            Head::TwoBranch {
                p_a: gpa,
                p_g: gpg,
                alpha: galpha,
                beta: gbeta,
            },
        ) => {
            for (f, &dzk) in fw.iter().zip(&dz) {
                *galpha += dzk * f.raw;
                *gbeta += dzk;
                let dr = dzk * alpha;
                if dr == 0.0 {
                    continue;
                }
                let (u_i, u_j) = (&f.e_i.unit, &f.e_j.unit);
                let a_i = p_a.tr_mul(u_i);
                let a_j = p_a.tr_mul(u_j);
                let g_i = p_g.tr_mul(u_i);
                let g_j = p_g.tr_mul(u_j);
                gpa.ger(-2.0 * dr, u_i, &a_i, 1.0);
                gpa.ger(-2.0 * dr, u_j, &a_j, 1.0);
                gpg.ger(2.0 * dr, u_i, &g_j, 1.0);
                gpg.ger(2.0 * dr, u_j, &g_i, 1.0);
                let du_i = (p_g * &g_j - p_a * &a_i) * (2.0 * dr);
                let du_j = (p_g * &g_i - p_a * &a_j) * (2.0 * dr);
                trunk_backward(&mut gw, &f.e_i, &du_i);
                trunk_backward(&mut gw, &f.e_j, &du_j);
            }
        }
        (
            Head::Mahalanobis { p, d0, lambda },
            Head::Mahalanobis {
                p: gp,
                d0: gd0,
                lambda: glambda,
            },
        ) => {
            for (f, &dzk) in fw.iter().zip(&dz) {
                *glambda += dzk * (d0 - f.raw);
                *gd0 += dzk * lambda;
                let dd = -dzk * lambda;
                if dd == 0.0 {
                    continue;
                }
                let delta = &f.e_i.unit - &f.e_j.unit;
                let e = p.tr_mul(&delta);
                gp.ger(2.0 * dd, &delta, &e, 1.0);
                let du = p * &e * (2.0 * dd);
                trunk_backward(&mut gw, &f.e_i, &du);
                trunk_backward(&mut gw, &f.e_j, &(-du));
            }
        }
        _ => unreachable!("zeros_like keeps the variant"),
    }
    g.w = gw;
    for (name, t) in g.tensors_mut() {
        if frozen.contains(&name) {
            t.fill(0.0);
        }
    }
    Ok((value, Gradients(g)))
}

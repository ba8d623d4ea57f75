use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::jb::JbModel;
use crate::linalg::{check_len, check_square};
use crate::textio::{parse_usize, push_matrix_rows, push_row, push_scalar, read_to_string, write_string, Lines};
use crate::transform::{LdaTransform, MIN_NORM};

/// Trainable parameter tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Param {
    W,
    PA,
    PG,
    Alpha,
    Beta,
    P,
    D0,
    Lambda,
}

impl Param {
    pub const ALL: [Param; 8] = [
        Param::W,
        Param::PA,
        Param::PG,
        Param::Alpha,
        Param::Beta,
        Param::P,
        Param::D0,
        Param::Lambda,
    ];
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Param::W => "W",
            Param::PA => "P_A",
            Param::PG => "P_G",
            Param::Alpha => "alpha",
            Param::Beta => "beta",
            Param::P => "P",
            Param::D0 => "d0",
            Param::Lambda => "lambda",
        })
    }
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "w" => Param::W,
            "p_a" | "pa" => Param::PA,
            "p_g" | "pg" => Param::PG,
            "alpha" => Param::Alpha,
            "beta" => Param::Beta,
            "p" => Param::P,
            "d0" => Param::D0,
            "lambda" => Param::Lambda,
            _ => return Err(Error::Config(format!("unknown parameter `{s}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    TwoBranch,
    Mahalanobis,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::TwoBranch => "two-branch",
            Variant::Mahalanobis => "mahalanobis",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-branch" => Ok(Variant::TwoBranch),
            "mahalanobis" => Ok(Variant::Mahalanobis),
            _ => Err(Error::Config(format!("unknown variant `{s}`"))),
        }
    }
}

/// Scoring head placed after the shared `LDA_net -> length norm` trunk.
#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    /// `r = 2 g_i^T g_j - |a_i|^2 - |a_j|^2`, `f = sigmoid(alpha r + beta)`.
    TwoBranch {
        p_a: DMatrix<f64>,
        p_g: DMatrix<f64>,
        alpha: f64,
        beta: f64,
    },
    /// `dist = |P^T (h_i - h_j)|^2`, `p = sigmoid(lambda (d0 - dist))`.
    Mahalanobis {
        p: DMatrix<f64>,
        d0: f64,
        lambda: f64,
    },
}

/// Siamese backend: shared projection `W` (with frozen centering offset `mean`),
/// length normalization, then a scoring head.
#[derive(Clone, Debug, PartialEq)]
pub struct SiameseModel {
    pub mean: DVector<f64>,
    pub w: DMatrix<f64>,
    pub head: Head,
}

/// Restriction of the two-branch head used by the ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RestrictMode {
    /// Keep only the self terms (`P_G = 0`).
    AOnly,
    /// Keep only the cross term (`P_A = 0`).
    GOnly,
    /// `P_G <- P_A`
    GFromA,
    /// `P_A <- P_G`
    AFromG,
}

impl RestrictMode {
    pub const ALL: [RestrictMode; 4] = [
        RestrictMode::AOnly,
        RestrictMode::GOnly,
        RestrictMode::GFromA,
        RestrictMode::AFromG,
    ];
}

impl fmt::Display for RestrictMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RestrictMode::AOnly => "a-only",
            RestrictMode::GOnly => "g-only",
            RestrictMode::GFromA => "g-from-a",
            RestrictMode::AFromG => "a-from-g",
        })
    }
}

impl FromStr for RestrictMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a-only" => Ok(RestrictMode::AOnly),
            "g-only" => Ok(RestrictMode::GOnly),
            "g-from-a" => Ok(RestrictMode::GFromA),
            "a-from-g" => Ok(RestrictMode::AFromG),
            _ => Err(Error::Config(format!("unknown restriction `{s}`"))),
        }
    }
}

/// Trunk activations for one input vector.
#[derive(Clone, Debug)]
pub(crate) struct Embedded {
    pub centered: DVector<f64>,
    pub norm: f64,
    pub unit: DVector<f64>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn he_normal(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    DMatrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

impl SiameseModel {
    pub fn variant(&self) -> Variant {
        match self.head {
            Head::TwoBranch { .. } => Variant::TwoBranch,
            Head::Mahalanobis { .. } => Variant::Mahalanobis,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.input_dim();
        let d = self.output_dim();
        check_len(&self.mean, "model mean", l)?;
        match &self.head {
            Head::TwoBranch { p_a, p_g, .. } => {
                check_square(p_a, "P_A", d)?;
                check_square(p_g, "P_G", d)?;
            }
            Head::Mahalanobis { p, .. } => check_square(p, "P", d)?,
        }
        if !self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
            || !self.mean.iter().all(|v| v.is_finite())
        {
            return Err(Error::Config("model parameters must be finite".into()));
        }
        Ok(())
    }

    /// Parameter tensors in a fixed order, column-major for matrices.
    pub fn tensors(&self) -> Vec<(Param, &[f64])> {
        let mut out: Vec<(Param, &[f64])> = vec![(Param::W, self.w.as_slice())];
        match &self.head {
            Head::TwoBranch {
                p_a,
                p_g,
                alpha,
                beta,
            } => {
                out.push((Param::PA, p_a.as_slice()));
                out.push((Param::PG, p_g.as_slice()));
                out.push((Param::Alpha, std::slice::from_ref(alpha)));
                out.push((Param::Beta, std::slice::from_ref(beta)));
            }
            Head::Mahalanobis { p, d0, lambda } => {
                out.push((Param::P, p.as_slice()));
                out.push((Param::D0, std::slice::from_ref(d0)));
                out.push((Param::Lambda, std::slice::from_ref(lambda)));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(Param, &mut [f64])> {
        let mut out: Vec<(Param, &mut [f64])> = vec![(Param::W, self.w.as_mut_slice())];
        match &mut self.head {
            Head::TwoBranch {
                p_a,
                p_g,
                alpha,
                beta,
            } => {
                out.push((Param::PA, p_a.as_mut_slice()));
                out.push((Param::PG, p_g.as_mut_slice()));
                out.push((Param::Alpha, std::slice::from_mut(alpha)));
                out.push((Param::Beta, std::slice::from_mut(beta)));
            }
            Head::Mahalanobis { p, d0, lambda } => {
                out.push((Param::P, p.as_mut_slice()));
                out.push((Param::D0, std::slice::from_mut(d0)));
                out.push((Param::Lambda, std::slice::from_mut(lambda)));
            }
        }
        out
    }

    /// Same shapes, every parameter zero (the mean is kept).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub(crate) fn embed(&self, x: &DVector<f64>) -> Result<Embedded> {
        check_len(x, "model input", self.input_dim())?;
        let centered = x - &self.mean;
        let h = self.w.tr_mul(&centered);
        let norm = h.norm();
        if !(norm >= MIN_NORM) {
            return Err(Error::ZeroVector);
        }
        let unit = h / norm;
        Ok(Embedded {
            centered,
            norm,
            unit,
        })
    }

    /// Raw score from two length-normalized trunk outputs: `r` for the two-branch head,
    /// the distance `dist` for the Mahalanobis head.
    pub(crate) fn head_raw(&self, u_i: &DVector<f64>, u_j: &DVector<f64>) -> f64 {
        match &self.head {
            Head::TwoBranch { p_a, p_g, .. } => {
                let a_i = p_a.tr_mul(u_i);
                let a_j = p_a.tr_mul(u_j);
                let g_i = p_g.tr_mul(u_i);
                let g_j = p_g.tr_mul(u_j);
                2.0 * g_i.dot(&g_j) - a_i.norm_squared() - a_j.norm_squared()
            }
            Head::Mahalanobis { p, .. } => p.tr_mul(&(u_i - u_j)).norm_squared(),
        }
    }

    /// Logit fed to the sigmoid.
    pub(crate) fn logit_from_raw(&self, raw: f64) -> f64 {
        match self.head {
            Head::TwoBranch { alpha, beta, .. } => alpha * raw + beta,
            Head::Mahalanobis { d0, lambda, .. } => lambda * (d0 - raw),
        }
    }

    /// Verification score: `r` for the two-branch head, `-dist` for the Mahalanobis head.
    pub fn score(&self, x_i: &DVector<f64>, x_j: &DVector<f64>) -> Result<f64> {
        let e_i = self.embed(x_i)?;
        let e_j = self.embed(x_j)?;
        let raw = self.head_raw(&e_i.unit, &e_j.unit);
        Ok(match self.head {
            Head::TwoBranch { .. } => raw,
            Head::Mahalanobis { .. } => -raw,
        })
    }

    /// Calibrated same-speaker probability.
    pub fn probability(&self, x_i: &DVector<f64>, x_j: &DVector<f64>) -> Result<f64> {
        let e_i = self.embed(x_i)?;
        let e_j = self.embed(x_j)?;
        Ok(sigmoid(self.logit_from_raw(self.head_raw(&e_i.unit, &e_j.unit))))
    }

    pub fn with_mean(mut self, mean: DVector<f64>) -> Result<Self> {
        check_len(&mean, "model mean", self.input_dim())?;
        self.mean = mean;
        Ok(self)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "siamese {} {} {}\n",
            self.variant(),
            self.input_dim(),
            self.output_dim()
        );
        push_row(&mut out, self.mean.iter());
        push_matrix_rows(&mut out, &self.w);
        match &self.head {
            Head::TwoBranch {
                p_a,
                p_g,
                alpha,
                beta,
            } => {
                push_matrix_rows(&mut out, p_a);
                push_matrix_rows(&mut out, p_g);
                push_scalar(&mut out, *alpha);
                push_scalar(&mut out, *beta);
            }
            Head::Mahalanobis { p, d0, lambda } => {
                push_matrix_rows(&mut out, p);
                push_scalar(&mut out, *d0);
                push_scalar(&mut out, *lambda);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let (n, hdr) = lines.header("siamese")?;
        let variant: Variant = hdr
            .first()
            .ok_or_else(|| Error::parse(n, "missing variant"))?
            .parse()
            .map_err(|_| Error::parse(n, "unknown variant"))?;
        let l = parse_usize(hdr.get(1), n, "input dimension")?;
        let d = parse_usize(hdr.get(2), n, "output dimension")?;
        let mean = lines.vector(l)?;
        let w = lines.matrix(l, d)?;
        let head = match variant {
            Variant::TwoBranch => Head::TwoBranch {
                p_a: lines.matrix(d, d)?,
                p_g: lines.matrix(d, d)?,
                alpha: lines.scalar()?,
                beta: lines.scalar()?,
            },
            Variant::Mahalanobis => Head::Mahalanobis {
                p: lines.matrix(d, d)?,
                d0: lines.scalar()?,
                lambda: lines.scalar()?,
            },
        };
        lines.finish()?;
        let m = SiameseModel { mean, w, head };
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_to_string(path)?)
    }
}

fn check_pairing(t: &LdaTransform, d: usize) -> Result<()> {
    if t.output_dim() != d {
        return Err(Error::Shape {
            what: "jb dimension vs lda output",
            expected: t.output_dim(),
            found: d,
        });
    }
    Ok(())
}

/// Two-branch model that reproduces the generative `LDA -> length norm -> JB` score.
pub fn init_from_generative(t: &LdaTransform, m: &JbModel) -> Result<SiameseModel> {
    check_pairing(t, m.dim())?;
    Ok(SiameseModel {
        mean: t.mean.clone(),
        w: t.w.clone(),
        head: Head::TwoBranch {
            p_a: m.p_a.clone(),
            p_g: m.p_g.clone(),
            alpha: 1.0,
            beta: 0.0,
        },
    })
}

/// One-branch Mahalanobis model with the LDA trunk and a given metric factor.
pub fn init_mahalanobis(t: &LdaTransform, p: DMatrix<f64>) -> Result<SiameseModel> {
    check_pairing(t, p.nrows())?;
    check_square(&p, "P", t.output_dim())?;
    Ok(SiameseModel {
        mean: t.mean.clone(),
        w: t.w.clone(),
        head: Head::Mahalanobis {
            p,
            d0: 0.0,
            lambda: 1.0,
        },
    })
}

/// He-normal initialization: each weight `~ N(0, 2 / fan_in)`, `alpha = 1`, `beta = 0`
/// (`lambda = 1`, `d0 = 0` for the Mahalanobis head). The centering offset is zero.
pub fn init_random(l: usize, d: usize, seed: u64, variant: Variant) -> SiameseModel {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let w = he_normal(l, d, l, &mut rng);
    let head = match variant {
        Variant::TwoBranch => Head::TwoBranch {
            p_a: he_normal(d, d, d, &mut rng),
            p_g: he_normal(d, d, d, &mut rng),
            alpha: 1.0,
            beta: 0.0,
        },
        Variant::Mahalanobis => Head::Mahalanobis {
            p: he_normal(d, d, d, &mut rng),
            d0: 0.0,
            lambda: 1.0,
        },
    };
    SiameseModel {
        mean: DVector::zeros(l),
        w,
        head,
    }
}

/// `(r, f)` for a two-branch model.
pub fn forward(model: &SiameseModel, x_i: &DVector<f64>, x_j: &DVector<f64>) -> Result<(f64, f64)> {
    if model.variant() != Variant::TwoBranch {
        return Err(Error::Config("forward needs a two-branch model".into()));
    }
    let e_i = model.embed(x_i)?;
    let e_j = model.embed(x_j)?;
    let r = model.head_raw(&e_i.unit, &e_j.unit);
    Ok((r, sigmoid(model.logit_from_raw(r))))
}

/// `(dist, p)` for a Mahalanobis model.
pub fn forward_md(model: &SiameseModel, x_i: &DVector<f64>, x_j: &DVector<f64>) -> Result<(f64, f64)> {
    if model.variant() != Variant::Mahalanobis {
        return Err(Error::Config("forward_md needs a mahalanobis model".into()));
    }
    let e_i = model.embed(x_i)?;
    let e_j = model.embed(x_j)?;
    let dist = model.head_raw(&e_i.unit, &e_j.unit);
    Ok((dist, sigmoid(model.logit_from_raw(dist))))
}

/// Copy of a two-branch model with one of the A/G restrictions applied.
pub fn restrict(model: &SiameseModel, mode: RestrictMode) -> Result<SiameseModel> {
    let Head::TwoBranch {
        p_a,
        p_g,
        alpha,
        beta,
    } = &model.head
    else {
        return Err(Error::Config("restrict needs a two-branch model".into()));
    };
    let (p_a, p_g) = match mode {
        RestrictMode::AOnly => (p_a.clone(), DMatrix::zeros(p_g.nrows(), p_g.ncols())),
        RestrictMode::GOnly => (DMatrix::zeros(p_a.nrows(), p_a.ncols()), p_g.clone()),
        RestrictMode::GFromA => (p_a.clone(), p_a.clone()),
        RestrictMode::AFromG => (p_g.clone(), p_g.clone()),
    };
    Ok(SiameseModel {
        mean: model.mean.clone(),
        w: model.w.clone(),
        head: Head::TwoBranch {
            p_a,
            p_g,
            alpha: *alpha,
            beta: *beta,
        },
    })
}

/// Mahalanobis model sharing the trunk of `model` with metric factor `p`.
pub fn to_mahalanobis(model: &SiameseModel, p: DMatrix<f64>) -> Result<SiameseModel> {
    check_square(&p, "P", model.output_dim())?;
    Ok(SiameseModel {
        mean: model.mean.clone(),
        w: model.w.clone(),
        head: Head::Mahalanobis {
            p,
            d0: 0.0,
            lambda: 1.0,
        },
    })
}

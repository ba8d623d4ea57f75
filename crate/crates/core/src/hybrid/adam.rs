use crate::error::{Error, Result};

use super::grad::Gradients;
use super::model::SiameseModel;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(model: &SiameseModel) -> Self {
        Self::with_config(model, AdamConfig::default())
    }

    pub fn with_config(model: &SiameseModel, cfg: AdamConfig) -> Self {
        let sizes: Vec<usize> = model.tensors().iter().map(|(_, t)| t.len()).collect();
        AdamState {
            cfg,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam update of a flat parameter slice (`t` is the 1-based step).
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    cfg: &AdamConfig,
) {
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    for k in 0..params.len() {
        let g = grads[k];
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[k] / c1;
        let v_hat = v[k] / c2;
        params[k] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Applies one Adam step to every parameter tensor of `model`.
pub fn adam_step(model: &mut SiameseModel, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    let gt = grads.tensors();
    if gt.len() != state.m.len() {
        return Err(Error::Shape {
            what: "gradient tensors",
            expected: state.m.len(),
            found: gt.len(),
        });
    }
    for (name, g) in &gt {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(name.to_string()));
        }
    }
    state.step += 1;
    let t = state.step;
    let cfg = state.cfg;
    for (((name, p), (gname, g)), (m, v)) in model
        .tensors_mut()
        .into_iter()
        .zip(gt)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if name != gname || p.len() != g.len() || m.len() != p.len() {
            return Err(Error::Shape {
                what: "gradient tensor size",
                expected: p.len(),
                found: g.len(),
            });
        }
        adam_update(p, g, m, v, t, lr, &cfg);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_scalar_step() {
        let cfg = AdamConfig::default();
        let (mut p, mut m, mut v) = ([1.0], [0.0], [0.0]);
        adam_update(&mut p, &[0.5], &mut m, &mut v, 1, 0.01, &cfg);
        // m_hat = 0.5, v_hat = 0.25
        let expect = 1.0 - 0.01 * 0.5 / (0.5 + 1e-8);
        assert!((p[0] - expect).abs() < 1e-15);
        assert!((1.0 - p[0] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn zero_lr_is_noop() {
        let cfg = AdamConfig::default();
        let (mut p, mut m, mut v) = ([1.0, -2.0], [0.0; 2], [0.0; 2]);
        adam_update(&mut p, &[0.3, 7.0], &mut m, &mut v, 1, 0.0, &cfg);
        assert_eq!(p, [1.0, -2.0]);
    }
}

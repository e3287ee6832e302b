//! AdamW with decoupled weight decay.

use std::collections::BTreeMap;

use super::Array;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moments keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: BTreeMap<String, Array>,
    pub v: BTreeMap<String, Array>,
}

impl OptimState {
    pub fn new(config: AdamWConfig, params: &BTreeMap<String, Array>) -> Self {
        let zeros: BTreeMap<_, _> = params
            .iter()
            .map(|(k, p)| (k.clone(), Array::zeros_like(p)))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One AdamW update in place. `lr_scale` multiplies the configured learning
/// rate (used for schedules).
///
/// `p ← p − lr·wd·p − lr·m̂/(√v̂ + ε)` with bias-corrected moments.
pub fn adamw_step(
    params: &mut BTreeMap<String, Array>,
    grads: &BTreeMap<String, Array>,
    state: &mut OptimState,
    lr_scale: f64,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing gradient for {name}")))?;
        p.check_same_shape(g)?;
        let m = state
            .m
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing moment for {name}")))?;
        p.check_same_shape(m)?;
    }
    if grads.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }

    state.step += 1;
    let cfg = state.config;
    let lr = cfg.lr * lr_scale;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);

    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let m = state.m.get_mut(name).expect("checked above");
        let v = state.v.get_mut(name).expect("moments share keys");
        let (p, g, m, v) = (
            p.as_mut_slice(),
            g.as_slice(),
            m.as_mut_slice(),
            v.as_mut_slice(),
        );
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * cfg.weight_decay * p[i];
            p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Plain Adam on flat slices, written independently of [`adamw_step`] for
/// cross-checking the `wd = 0` case.
pub fn adam_step_reference(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &AdamWConfig,
) {
    let t = step as i32;
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i].powi(2);
        let update = (m[i] / (1.0 - cfg.beta1.powi(t))) / ((v[i] / (1.0 - cfg.beta2.powi(t))).sqrt() + cfg.eps);
        p[i] -= cfg.lr * update;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(name: &str, v: Vec<f64>) -> BTreeMap<String, Array> {
        BTreeMap::from([(name.to_string(), Array::vector(v))])
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let mut p = single("w", vec![1.0, -2.0, 3.5]);
        let before = p.clone();
        let g = single("w", vec![0.0; 3]);
        let mut st = OptimState::new(AdamWConfig::default(), &p);
        adamw_step(&mut p, &g, &mut st, 1.0).unwrap();
        assert_eq!(p, before);
    }

    // Step 1: m̂ = g, v̂ = g², update = g/(|g|+ε) ≈ 1, so p = 1 − 0.1·1/(1+1e-8).
    #[test]
    fn first_step_scalar() {
        let mut p = single("w", vec![1.0]);
        let g = single("w", vec![1.0]);
        let cfg = AdamWConfig {
            lr: 0.1,
            ..AdamWConfig::default()
        };
        let mut st = OptimState::new(cfg, &p);
        adamw_step(&mut p, &g, &mut st, 1.0).unwrap();
        let got = p["w"][0];
        assert!((got - 0.9).abs() < 1e-8, "{got}");
        assert_eq!(st.step, 1);
    }

    #[test]
    fn decoupled_decay_exact() {
        let (lr, wd) = (0.05, 0.2);
        let mut p = single("w", vec![2.0, -4.0]);
        let g = single("w", vec![0.0, 0.0]);
        let cfg = AdamWConfig {
            lr,
            weight_decay: wd,
            ..AdamWConfig::default()
        };
        let mut st = OptimState::new(cfg, &p);
        adamw_step(&mut p, &g, &mut st, 1.0).unwrap();
        assert_eq!(p["w"][0], 2.0 - lr * wd * 2.0);
        assert_eq!(p["w"][1], -4.0 - lr * wd * -4.0);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut p = single("w", vec![1.0, 2.0]);
        let g = single("w", vec![1.0]);
        let mut st = OptimState::new(AdamWConfig::default(), &p);
        assert!(adamw_step(&mut p, &g, &mut st, 1.0).is_err());
    }

    #[test]
    fn no_decay_matches_plain_adam() {
        let cfg = AdamWConfig {
            lr: 0.01,
            ..AdamWConfig::default()
        };
        let mut p = single("w", vec![0.3, -1.2, 2.0]);
        let mut st = OptimState::new(cfg, &p);
        let (mut rp, mut rm, mut rv) = (vec![0.3, -1.2, 2.0], vec![0.0; 3], vec![0.0; 3]);
        for k in 0..25 {
            let gv: Vec<f64> = (0..3).map(|i| ((k * 3 + i) as f64).sin()).collect();
            adamw_step(&mut p, &single("w", gv.clone()), &mut st, 1.0).unwrap();
            adam_step_reference(&mut rp, &gv, &mut rm, &mut rv, k as u64 + 1, &cfg);
        }
        assert_eq!(p["w"].as_slice(), rp.as_slice());
    }
}

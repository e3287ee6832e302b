//! Central finite differences against analytic gradients.

use std::collections::BTreeMap;

use super::Array;
use crate::error::{Error, Result};

/// Values below this magnitude are compared absolutely rather than
/// relatively.
const REL_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Central-difference gradient of `f` at `params` with step `h`.
pub fn numeric_grad<F>(f: F, params: &BTreeMap<String, Array>, h: f64) -> Result<BTreeMap<String, Array>>
where
    F: Fn(&BTreeMap<String, Array>) -> f64,
{
    let base = f(params);
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("objective is {base} at the check point")));
    }
    let mut work = params.clone();
    let mut out = BTreeMap::new();
    for (name, p) in params {
        let mut g = Array::zeros_like(p);
        for i in 0..p.len() {
            let orig = p[i];
            work.get_mut(name).expect("cloned keys")[i] = orig + h;
            let fp = f(&work);
            work.get_mut(name).expect("cloned keys")[i] = orig - h;
            let fm = f(&work);
            work.get_mut(name).expect("cloned keys")[i] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite(format!("objective non-finite near {name}[{i}]")));
            }
            g[i] = (fp - fm) / (2.0 * h);
        }
        out.insert(name.clone(), g);
    }
    Ok(out)
}

/// Maximum elementwise [`relative_error`] between `analytic` and a central
/// difference of `f`.
pub fn grad_check<F>(f: F, analytic: &BTreeMap<String, Array>, params: &BTreeMap<String, Array>, h: f64) -> Result<f64>
where
    F: Fn(&BTreeMap<String, Array>) -> f64,
{
    let numeric = numeric_grad(f, params, h)?;
    let mut worst: f64 = 0.0;
    for (name, n) in &numeric {
        let a = analytic
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no analytic gradient for {name}")))?;
        n.check_same_shape(a)?;
        for (x, y) in a.as_slice().iter().zip(n.as_slice()) {
            worst = worst.max(relative_error(*x, *y));
        }
    }
    Ok(worst)
}

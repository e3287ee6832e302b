//! Denoising, identity and expression losses with their input gradients.

use crate::error::{Error, Result};
use crate::numerics::Array;

/// The three loss terms of one sample or one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub l_dm: f64,
    pub l_id: f64,
    pub l_exp: f64,
}

impl LossParts {
    pub fn is_finite(&self) -> bool {
        self.l_dm.is_finite() && self.l_id.is_finite() && self.l_exp.is_finite()
    }
}

fn mse(a: &Array, b: &Array) -> Result<f64> {
    a.check_same_shape(b)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

/// Mean squared error between the true and predicted noise.
pub fn loss_dm(eps: &Array, eps_hat: &Array) -> Result<f64> {
    mse(eps, eps_hat)
}

/// Mean squared error between two expression embeddings.
pub fn loss_exp(e_src: &Array, e_gen: &Array) -> Result<f64> {
    mse(e_src, e_gen)
}

fn cosine(a: &Array, b: &Array) -> Result<f64> {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(a.dot(b)? / (na * nb))
}

/// Mean of `1 − cos` over paired identity embeddings.
pub fn loss_id(src: &[Array], gen: &[Array]) -> Result<f64> {
    if src.len() != gen.len() || src.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "identity lists of length {} and {}",
            src.len(),
            gen.len()
        )));
    }
    let mut acc = 0.0;
    for (a, b) in src.iter().zip(gen) {
        acc += 1.0 - cosine(a, b)?;
    }
    Ok(acc / src.len() as f64)
}

/// `L_DM + λ₁·L_id + λ₂·L_exp`.
pub fn total_loss(parts: LossParts, lambda1: f64, lambda2: f64) -> f64 {
    parts.l_dm + lambda1 * parts.l_id + lambda2 * parts.l_exp
}

/// `∂(1 − cos(v, s))/∂v` for a raw (unnormalized) `v` and a target `s`.
pub(crate) fn one_minus_cos_grad(v: &Array, s: &Array) -> Result<(f64, Array)> {
    let (nv, ns) = (v.norm(), s.norm());
    if nv == 0.0 || ns == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let c = v.dot(s)? / (nv * ns);
    // ∂cos/∂v = s/(|v||s|) − cos·v/|v|²
    let g = s.lincomb(-1.0 / (nv * ns), v, c / (nv * nv))?;
    Ok((1.0 - c, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gauss, Rng};

    fn v(x: &[f64]) -> Array {
        Array::vector(x.to_vec())
    }

    #[test]
    fn dm_values() {
        let e = v(&[0.3, -1.0, 2.0]);
        assert_eq!(loss_dm(&e, &e).unwrap(), 0.0);
        assert_eq!(loss_dm(&Array::zeros(&[4]), &Array::filled(&[4], 0.5)).unwrap(), 0.25);
        let mut rng = Rng::new(3);
        let (a, b) = (gauss(&mut rng, &[37]), gauss(&mut rng, &[37]));
        let mut brute = 0.0;
        for i in 0..37 {
            brute += (a[i] - b[i]).powi(2) / 37.0;
        }
        assert!((loss_dm(&a, &b).unwrap() - brute).abs() < 1e-12);
        assert!(loss_dm(&a, &Array::zeros(&[3])).is_err());
    }

    #[test]
    fn id_values() {
        let (x, y) = (v(&[1.0, 0.0]), v(&[0.0, 1.0]));
        let xs = vec![x.clone(), y.clone()];
        assert!(loss_id(&xs, &xs).unwrap().abs() < 1e-15);
        assert!((loss_id(&xs, &[y.clone(), x.clone()]).unwrap() - 1.0).abs() < 1e-15);
        assert!((loss_id(&xs, &[x.scale(-1.0), y.scale(-1.0)]).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(loss_id(&[x.clone()], &[Array::zeros(&[2])]), Err(Error::ZeroNorm)));
        assert!(loss_id(&xs, &[x]).is_err());
    }

    #[test]
    fn exp_values() {
        assert_eq!(loss_exp(&v(&[0.5, 2.0]), &v(&[0.5, 2.0])).unwrap(), 0.0);
        assert_eq!(loss_exp(&v(&[0.0, 0.0]), &v(&[1.0, 1.0])).unwrap(), 1.0);
        let mut rng = Rng::new(4);
        let (a, b) = (gauss(&mut rng, &[5]), gauss(&mut rng, &[5]));
        let brute: f64 = (0..5).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>() / 5.0;
        assert!((loss_exp(&a, &b).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn total_values() {
        let ones = LossParts { l_dm: 1.0, l_id: 1.0, l_exp: 1.0 };
        assert_eq!(total_loss(ones, 0.003, 0.01), 1.013);
        let p = LossParts { l_dm: 0.5, l_id: 2.0, l_exp: 3.0 };
        assert_eq!(total_loss(p, 0.003, 0.01), 0.536);
        assert_eq!(total_loss(p, 0.0, 0.0), 0.5);
    }

    #[test]
    fn cosine_gradient_matches_differences() {
        let mut rng = Rng::new(9);
        let (x, s) = (gauss(&mut rng, &[4]), gauss(&mut rng, &[4]));
        let (_, g) = one_minus_cos_grad(&x, &s).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let n = (one_minus_cos_grad(&xp, &s).unwrap().0 - one_minus_cos_grad(&xm, &s).unwrap().0) / (2.0 * h);
            assert!((n - g[i]).abs() < 1e-8, "{n} vs {}", g[i]);
        }
    }
}

//! Discrete noise schedules with the closed-form forward marginal and the
//! Gaussian posterior `q(x_{t-1} | x_t, x_0)`.
//!
//! **Timesteps are 1-based**: valid `t` runs from `1` to `T` inclusive, and
//! `alpha_bar(0) == 1` is stored explicitly so that `t = 1` goes through the
//! same formulas as every other step.

use crate::error::{Error, Result};
use crate::numerics::Array;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    /// `betas[t]` for `t` in `1..=T`; index 0 is unused and holds 0.
    betas: Vec<f64>,
    /// `alphas[t] = 1 − β_t`; index 0 holds 1.
    alphas: Vec<f64>,
    /// `alpha_bars[t] = ∏_{s≤t} α_s`; `alpha_bars[0] = 1`.
    alpha_bars: Vec<f64>,
    /// Posterior variance `β̃_t`; index 0 unused.
    post_var: Vec<f64>,
}

/// Coefficients of the posterior mean `c_x0·x0 + c_xt·x_t` and its variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoeffs {
    pub c_x0: f64,
    pub c_xt: f64,
    pub var: f64,
}

impl NoiseSchedule {
    /// Linearly spaced `β` from `beta_start` to `beta_end`, both inclusive.
    pub fn linear(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas = (0..num_steps)
            .map(|i| {
                if num_steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (num_steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Desk-scale default: `T = 100` with the `[1e-4, 0.02]` range rescaled by
    /// `1000 / T`, so that `ᾱ_T` lands near the value the 1000-step range
    /// reaches (about `2e-5`).
    pub fn desk_default() -> Self {
        Self::linear(100, 1e-3, 0.2).expect("valid constants")
    }

    /// Schedule from explicit `β_1..β_T`.
    pub fn from_betas(betas_1_to_t: Vec<f64>) -> Result<Self> {
        if betas_1_to_t.is_empty() {
            return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
        }
        if let Some(b) = betas_1_to_t.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidArgument(format!("beta {b} outside (0, 1)")));
        }
        let n = betas_1_to_t.len();
        let mut alphas = Vec::with_capacity(n + 1);
        let mut betas = Vec::with_capacity(n + 1);
        alphas.push(1.0);
        betas.push(0.0);
        for b in betas_1_to_t {
            let a = 1.0 - b;
            alphas.push(a);
            // β is re-derived from α so that 1 − ᾱ_1 equals β_1 bit for bit.
            betas.push(1.0 - a);
        }
        let mut alpha_bars = Vec::with_capacity(n + 1);
        alpha_bars.push(1.0);
        for t in 1..=n {
            alpha_bars.push(alpha_bars[t - 1] * alphas[t]);
        }
        let mut post_var = vec![0.0; n + 1];
        for t in 1..=n {
            post_var[t] = (1.0 - alpha_bars[t - 1]) / (1.0 - alpha_bars[t]) * betas[t];
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            post_var,
        })
    }

    /// Number of diffusion steps `T`.
    pub fn num_steps(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.num_steps(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    /// `ᾱ_t`, defined for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.post_var[t]
    }

    /// `β_1..β_T`.
    pub fn betas(&self) -> &[f64] {
        &self.betas[1..]
    }

    /// `ᾱ_0..ᾱ_T`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `√ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
    pub fn q_sample(&self, x0: &Array, t: usize, eps: &Array) -> Result<Array> {
        self.check_t(t)?;
        let ab = self.alpha_bars[t];
        x0.lincomb(ab.sqrt(), eps, (1.0 - ab).sqrt())
    }

    pub fn posterior_coeffs(&self, t: usize) -> Result<PosteriorCoeffs> {
        self.check_t(t)?;
        let (ab, ab_prev) = (self.alpha_bars[t], self.alpha_bars[t - 1]);
        let denom = 1.0 - ab;
        Ok(PosteriorCoeffs {
            c_x0: ab_prev.sqrt() * self.betas[t] / denom,
            c_xt: self.alphas[t].sqrt() * (1.0 - ab_prev) / denom,
            var: self.post_var[t],
        })
    }

    /// Posterior of `x_to` given `x_from` and `x_0` for `to < from`; equals
    /// [`posterior_coeffs`](Self::posterior_coeffs) when `to = from − 1`.
    pub fn posterior_coeffs_jump(&self, from: usize, to: usize) -> Result<PosteriorCoeffs> {
        self.check_t(from)?;
        if to >= from {
            return Err(Error::InvalidArgument(format!("jump {from} -> {to} is not backwards")));
        }
        if to + 1 == from {
            return self.posterior_coeffs(from);
        }
        let (ab, ab_to) = (self.alpha_bars[from], self.alpha_bars[to]);
        let ratio = ab / ab_to;
        let beta_eff = 1.0 - ratio;
        let denom = 1.0 - ab;
        Ok(PosteriorCoeffs {
            c_x0: ab_to.sqrt() * beta_eff / denom,
            c_xt: ratio.sqrt() * (1.0 - ab_to) / denom,
            var: (1.0 - ab_to) / denom * beta_eff,
        })
    }

    /// One draw from `q(x_{t-1} | x_t, x_0)`, or its mean when `eps` is `None`.
    pub fn posterior_step(&self, x0: &Array, xt: &Array, t: usize, eps: Option<&Array>) -> Result<Array> {
        x0.check_same_shape(xt)?;
        let c = self.posterior_coeffs(t)?;
        let mut out = x0.lincomb(c.c_x0, xt, c.c_xt)?;
        if let Some(eps) = eps {
            out.axpy(c.var.sqrt(), eps)?;
        }
        Ok(out)
    }

    /// Strided subsequence `T = τ_1 > τ_2 > … > τ_k ≥ 1` used by the
    /// generation loop.
    pub fn strided_timesteps(&self, steps: usize) -> Result<Vec<usize>> {
        let total = self.num_steps();
        if steps == 0 || steps > total {
            return Err(Error::InvalidArgument(format!(
                "inference steps {steps} outside 1..={total}"
            )));
        }
        let mut ts: Vec<usize> = (0..steps)
            .map(|i| total - (i * total) / steps)
            .collect();
        ts.dedup();
        Ok(ts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_step() -> NoiseSchedule {
        NoiseSchedule::linear(2, 0.1, 0.2).unwrap()
    }

    #[test]
    fn constant_half() {
        let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[1.0, 0.5, 0.25]);
    }

    #[test]
    fn two_step_hand_values() {
        let s = two_step();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
        // (1 − 0.9)/(1 − 0.72)·0.2 = 0.0714285714…
        assert!((s.posterior_variance(2) - 0.1 / 0.28 * 0.2).abs() < 1e-15);
        assert!((s.posterior_variance(2) - 0.0714286).abs() < 1e-7);
    }

    #[test]
    fn thousand_step_tail() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        // Independent product of (1 − β_i) in log space.
        let log: f64 = (0..1000)
            .map(|i| (1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0)).ln())
            .sum();
        assert!((s.alpha_bar(1000) - log.exp()).abs() < 1e-15);
        assert!(s.alpha_bar(1000) < 5e-5);
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn q_sample_values() {
        let s = two_step();
        let x0 = Array::vector(vec![1.0]);
        let eps = Array::vector(vec![0.5]);
        let z = s.q_sample(&x0, 2, &eps).unwrap();
        // √0.72 + √0.28·0.5
        assert!((z[0] - 1.113103).abs() < 1e-6);
        assert!(s.q_sample(&x0, 3, &eps).is_err());
        assert!(s.q_sample(&x0, 0, &eps).is_err());

        let zero = Array::vector(vec![0.0]);
        let z = s.q_sample(&zero, 2, &eps).unwrap();
        assert_eq!(z[0], (1.0 - s.alpha_bar(2)).sqrt() * 0.5);
    }

    #[test]
    fn q_sample_identity_when_no_noise() {
        // ᾱ_t → 1 as β → 0; the residual noise weight is √(1 − ᾱ_t) ≈ 2e-7.
        let s = NoiseSchedule::linear(4, 1e-14, 1e-14).unwrap();
        let x0 = Array::vector(vec![0.25, -3.0]);
        let eps = Array::vector(vec![1.0, 1.0]);
        let z = s.q_sample(&x0, 4, &eps).unwrap();
        for (a, b) in z.as_slice().iter().zip(x0.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn posterior_two_step() {
        let c = two_step().posterior_coeffs(2).unwrap();
        // √0.9·0.2/0.28 and √0.8·0.1/0.28
        assert!((c.c_x0 - 0.6776309).abs() < 1e-7);
        assert!((c.c_xt - 0.3194383).abs() < 1e-7);
        assert!((c.var - 0.0714286).abs() < 1e-7);
    }

    #[test]
    fn posterior_step_mean() {
        let s = two_step();
        let x0 = Array::vector(vec![1.0]);
        let xt = Array::vector(vec![1.113103]);
        let out = s.posterior_step(&x0, &xt, 2, None).unwrap();
        // 0.6776309 + 0.3194383·1.113103 = 1.0331986
        assert!((out[0] - 1.0331986).abs() < 1e-6);

        let xt = Array::vector(vec![-7.0]);
        assert_eq!(s.posterior_step(&x0, &xt, 1, None).unwrap(), x0);

        let bad = Array::vector(vec![1.0, 2.0]);
        assert!(matches!(s.posterior_step(&x0, &bad, 2, None), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn posterior_step_degenerate_keeps_x0() {
        let s = NoiseSchedule::linear(3, 1e-12, 1e-12).unwrap();
        let x = Array::vector(vec![0.5, 2.0]);
        let out = s.posterior_step(&x, &x, 3, None).unwrap();
        for (a, b) in out.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn strided_timesteps_cover_range() {
        let s = NoiseSchedule::desk_default();
        assert_eq!(s.strided_timesteps(100).unwrap(), (1..=100).rev().collect::<Vec<_>>());
        let ts = s.strided_timesteps(10).unwrap();
        assert_eq!(ts.first(), Some(&100));
        assert_eq!(ts.len(), 10);
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
        assert!(s.strided_timesteps(0).is_err());
        assert!(s.strided_timesteps(101).is_err());
    }

    #[test]
    fn desk_default_tail() {
        let s = NoiseSchedule::desk_default();
        assert_eq!(s.num_steps(), 100);
        assert!(s.alpha_bar(100) < 5e-5);
    }

    proptest! {
        #[test]
        fn first_step_posterior_is_x0(b0 in 1e-6f64..0.5, b1 in 0.0f64..0.49, n in 1usize..50) {
            let s = NoiseSchedule::linear(n, b0, (b0 + b1).min(0.5)).unwrap();
            let c = s.posterior_coeffs(1).unwrap();
            prop_assert_eq!(c, PosteriorCoeffs { c_x0: 1.0, c_xt: 0.0, var: 0.0 });
        }

        #[test]
        fn alpha_bar_strictly_decreasing(b0 in 1e-6f64..0.1, extra in 0.0f64..0.5, n in 2usize..200) {
            let s = NoiseSchedule::linear(n, b0, b0 + extra).unwrap();
            prop_assert_eq!(s.alpha_bar(0), 1.0);
            for t in 1..=n {
                prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                let expected = (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t);
                prop_assert_eq!(s.posterior_variance(t), expected);
            }
        }
    }
}

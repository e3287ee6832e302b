//! Estimator comparison on Gaussian data, where the exact denoiser is known.

use std::fmt::Write as _;

use crate::denoiser::ConditionBundle;
use crate::error::Result;
use crate::numerics::{fmt_sig9, gauss, sub_seed, Array};
use crate::par::Exec;
use crate::samplers::{compare_estimators, ComparisonRow};
use crate::schedule::NoiseSchedule;
use crate::world::oracle_denoiser_gaussian;

pub const COMPARISON_HEADER: &str = "sigma,t,n,mse_one_step,mse_midpoint,mse_improved,diff_mean,diff_stderr";

/// `T/4, T/2, 3T/4`, rounded down and clamped to at least 1.
pub fn quarter_timesteps(s: &NoiseSchedule) -> Vec<usize> {
    let t = s.num_steps();
    [t / 4, t / 2, 3 * t / 4].into_iter().map(|x| x.max(1)).collect()
}

/// Monte-Carlo reconstruction error of every estimator under the exact
/// denoiser for `N(0, σ²I)` data in `dim` dimensions, one block of rows per
/// `σ`.
pub fn gaussian_comparison(
    s: &NoiseSchedule,
    sigmas: &[f64],
    dim: usize,
    t_list: &[usize],
    n: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<(f64, ComparisonRow)>> {
    let mut out = Vec::new();
    for (j, &sigma) in sigmas.iter().enumerate() {
        let oracle = oracle_denoiser_gaussian(s, Array::zeros(&[dim]), sigma)?;
        let draw = |rng: &mut crate::numerics::Rng| gauss(rng, &[dim]).scale(sigma);
        let cond = ConditionBundle::unconditioned(dim);
        let rows = compare_estimators(s, &oracle, draw, &cond, t_list, n, sub_seed(seed, j as u64), false, exec)?;
        out.extend(rows.into_iter().map(|r| (sigma, r)));
    }
    Ok(out)
}

pub fn comparison_csv(rows: &[(f64, ComparisonRow)]) -> String {
    let mut out = format!("{COMPARISON_HEADER}\n");
    for (sigma, r) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            fmt_sig9(*sigma),
            r.t,
            r.n,
            fmt_sig9(r.mse_one_step),
            fmt_sig9(r.mse_midpoint),
            fmt_sig9(r.mse_improved),
            fmt_sig9(r.diff_mean),
            fmt_sig9(r.diff_stderr)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improved_matches_one_step_under_the_exact_denoiser() {
        let s = NoiseSchedule::desk_default();
        let ts = quarter_timesteps(&s);
        assert_eq!(ts, [25, 50, 75]);
        let rows = gaussian_comparison(&s, &[0.5, 2.0], 4, &ts, 200, 3, Exec::Sequential).unwrap();
        assert_eq!(rows.len(), 6);
        for (_, r) in &rows {
            assert!((r.mse_improved - r.mse_one_step).abs() < 1e-9 * r.mse_one_step.max(1.0), "{r:?}");
        }
        let csv = comparison_csv(&rows);
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.starts_with(COMPARISON_HEADER));
    }
}

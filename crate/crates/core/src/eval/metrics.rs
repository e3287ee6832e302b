//! Identity retrieval, expression error, pose analog and reconstruction MSE.

use crate::error::{Error, Result};
use crate::numerics::Array;
use crate::world::{OracleEncoders, World};

/// Metric values of one evaluated model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    /// Fraction of generations whose nearest identity prototype is the
    /// intended class.
    pub id_retrieval: f64,
    /// Mean Euclidean distance between expression embeddings.
    pub exp_error: f64,
    /// Mean Euclidean error of the pose factor read off the face region.
    pub pose_error: f64,
    /// Mean squared error against the noiseless intended render.
    pub mse: f64,
}

impl MetricsReport {
    pub fn failed() -> Self {
        Self {
            id_retrieval: f64::NAN,
            exp_error: f64::NAN,
            pose_error: f64::NAN,
            mse: f64::NAN,
        }
    }
}

fn check_pairs(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    if a != b {
        return Err(Error::InvalidArgument(format!("{a} generations for {b} references")));
    }
    Ok(())
}

/// Class whose prototype has the largest cosine similarity with `x` under
/// the retrieval read-out.
pub fn nearest_identity(world: &World, x: &Array) -> Result<usize> {
    let c = world.encoders.identity_coefficients(x)?;
    let zeros = |n| vec![0.0; n];
    let s = &world.spec;
    let mut best = (f64::NEG_INFINITY, 0);
    for k in 0..s.num_ids {
        let proto = world.render(k, &zeros(s.exp_dim), &zeros(s.pose_dim), &zeros(s.bkg_free));
        let p = world.encoders.identity_coefficients(&proto)?;
        let denom = c.norm() * p.norm();
        let cos = if denom > 0.0 { c.dot(&p)? / denom } else { 0.0 };
        if cos > best.0 {
            best = (cos, k);
        }
    }
    Ok(best.1)
}

pub fn metric_id_retrieval(world: &World, gen: &[Array], intended: &[usize]) -> Result<f64> {
    check_pairs(gen.len(), intended.len())?;
    let mut hits = 0usize;
    for (x, k) in gen.iter().zip(intended) {
        hits += (nearest_identity(world, x)? == *k) as usize;
    }
    Ok(hits as f64 / gen.len() as f64)
}

/// Mean `‖E_exp(gen) − E_exp(src)‖₂`.
pub fn metric_exp_error(enc: &OracleEncoders, gen: &[Array], exp_src: &[Array]) -> Result<f64> {
    check_pairs(gen.len(), exp_src.len())?;
    let mut acc = 0.0;
    for (g, s) in gen.iter().zip(exp_src) {
        acc += enc.expression(g)?.sub(&enc.expression(s)?)?.norm();
    }
    Ok(acc / gen.len() as f64)
}

/// Mean Euclidean error between the pose factor recovered from the face
/// region of each generation and the true pose of its background source.
pub fn metric_pose_error(enc: &OracleEncoders, gen: &[Array], true_pose: &[Array]) -> Result<f64> {
    check_pairs(gen.len(), true_pose.len())?;
    let mut acc = 0.0;
    for (g, p) in gen.iter().zip(true_pose) {
        acc += enc.pose(g)?.sub(p)?.norm();
    }
    Ok(acc / gen.len() as f64)
}

/// Mean over samples of the per-coordinate squared error.
pub fn metric_mse(gen: &[Array], reference: &[Array]) -> Result<f64> {
    check_pairs(gen.len(), reference.len())?;
    let mut acc = 0.0;
    for (g, r) in gen.iter().zip(reference) {
        let d = g.sub(r)?;
        acc += d.dot(&d)? / d.len() as f64;
    }
    Ok(acc / gen.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gauss, Rng};
    use crate::world::{sample_world, WorldSpec};

    fn noiseless() -> World {
        World::new(WorldSpec {
            sigma_data: 0.0,
            ..WorldSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn retrieval_extremes() {
        let w = noiseless();
        let mut rng = Rng::new(1);
        let samples: Vec<_> = (0..64).map(|_| sample_world(&w, &mut rng)).collect();
        let gen: Vec<Array> = samples.iter().map(|s| s.x0.clone()).collect();
        let right: Vec<usize> = samples.iter().map(|s| s.id_class).collect();
        assert_eq!(metric_id_retrieval(&w, &gen, &right).unwrap(), 1.0);
        let wrong: Vec<usize> = right.iter().map(|k| (k + 1) % 8).collect();
        assert_eq!(metric_id_retrieval(&w, &gen, &wrong).unwrap(), 0.0);
        let scaled: Vec<Array> = gen.iter().map(|x| x.scale(3.7)).collect();
        assert_eq!(metric_id_retrieval(&w, &scaled, &right).unwrap(), 1.0);
        assert!(metric_id_retrieval(&w, &[], &[]).is_err());
    }

    #[test]
    fn retrieval_of_noise_is_chance() {
        let w = noiseless();
        let mut rng = Rng::new(2);
        let n = 10_000;
        let gen: Vec<Array> = (0..n).map(|_| gauss(&mut rng, &[w.dim()])).collect();
        let intended: Vec<usize> = (0..n).map(|_| rng.below(8)).collect();
        let acc = metric_id_retrieval(&w, &gen, &intended).unwrap();
        let sd = (0.125f64 * 0.875 / n as f64).sqrt();
        assert!((acc - 0.125).abs() < 3.0 * sd, "{acc}");
    }

    #[test]
    fn expression_error_values() {
        let w = noiseless();
        let mut rng = Rng::new(3);
        let s = sample_world(&w, &mut rng);
        let enc = &w.encoders;
        assert_eq!(metric_exp_error(enc, std::slice::from_ref(&s.x0), std::slice::from_ref(&s.x0)).unwrap(), 0.0);
        // Moving the expression factor by a unit vector moves the embedding by one.
        let mut e = s.exp_factor.as_slice().to_vec();
        e[0] += 1.0;
        let moved = w.render(s.id_class, &e, s.pose_factor.as_slice(), s.bkg_factor.as_slice());
        assert!((metric_exp_error(enc, &[moved], std::slice::from_ref(&s.x0)).unwrap() - 1.0).abs() < 1e-9);
        let gen: Vec<Array> = (0..5).map(|_| gauss(&mut rng, &[w.dim()])).collect();
        let src: Vec<Array> = (0..5).map(|_| gauss(&mut rng, &[w.dim()])).collect();
        let mut brute = 0.0;
        for (g, r) in gen.iter().zip(&src) {
            let (a, b) = (enc.expression(g).unwrap(), enc.expression(r).unwrap());
            brute += (0..a.len()).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt() / 5.0;
        }
        assert!((metric_exp_error(enc, &gen, &src).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn pose_error_values() {
        let w = noiseless();
        let mut rng = Rng::new(4);
        let s = sample_world(&w, &mut rng);
        let enc = &w.encoders;
        let err = metric_pose_error(enc, std::slice::from_ref(&s.x0), std::slice::from_ref(&s.pose_factor)).unwrap();
        assert!(err < 1e-9, "{err}");
        let mut g = s.pose_factor.as_slice().to_vec();
        g[1] += 1.0;
        let shifted = w.render(s.id_class, s.exp_factor.as_slice(), &g, s.bkg_factor.as_slice());
        let err = metric_pose_error(enc, &[shifted.clone()], std::slice::from_ref(&s.pose_factor)).unwrap();
        assert!((err - 1.0).abs() < 1e-9, "{err}");
        assert_eq!(err, metric_pose_error(enc, &[shifted], std::slice::from_ref(&s.pose_factor)).unwrap());
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let w = World::new(WorldSpec::default()).unwrap();
        let mut rng = Rng::new(5);
        let gen: Vec<Array> = (0..7).map(|_| gauss(&mut rng, &[w.dim()])).collect();
        let refs: Vec<Array> = (0..7).map(|_| gauss(&mut rng, &[w.dim()])).collect();
        let ids: Vec<usize> = (0..7).map(|i| i % 8).collect();
        let perm = [3, 0, 6, 1, 5, 2, 4];
        let pg: Vec<Array> = perm.iter().map(|&i| gen[i].clone()).collect();
        let pr: Vec<Array> = perm.iter().map(|&i| refs[i].clone()).collect();
        let pi: Vec<usize> = perm.iter().map(|&i| ids[i]).collect();
        assert_eq!(metric_id_retrieval(&w, &gen, &ids).unwrap(), metric_id_retrieval(&w, &pg, &pi).unwrap());
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(metric_mse(&gen, &refs).unwrap(), metric_mse(&pg, &pr).unwrap()));
        assert!(close(
            metric_exp_error(&w.encoders, &gen, &refs).unwrap(),
            metric_exp_error(&w.encoders, &pg, &pr).unwrap()
        ));
    }
}

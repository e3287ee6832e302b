//! Synthetic factor world standing in for face images.
//!
//! A data vector is `[face | background]`. The face region mixes an identity
//! prototype, an expression factor and a pose factor through fixed generator
//! matrices; the background mixes free background factors with the *same*
//! pose factor, so pose can be read off the background alone. Encoders are
//! exact least-squares read-outs of those generators.

use nalgebra::{DMatrix, DVector};

use crate::denoiser::ConditionBundle;
use crate::error::{Error, Result};
use crate::numerics::{Array, Rng};
use crate::samplers::Denoiser;
use crate::schedule::NoiseSchedule;

/// Scalar description of a world. Every matrix is generated from `world_seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub face_dim: usize,
    pub bkg_dim: usize,
    /// Number of identity classes `K`.
    pub num_ids: usize,
    pub exp_dim: usize,
    pub pose_dim: usize,
    /// Free background factors not shared with the face.
    pub bkg_free: usize,
    /// Entry scale of the identity prototypes relative to the other
    /// generators.
    pub id_scale: f64,
    /// Rows of each lossy identity sketch.
    pub sketch_dim: usize,
    pub sigma_data: f64,
    pub world_seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            face_dim: 16,
            bkg_dim: 16,
            num_ids: 8,
            exp_dim: 2,
            pose_dim: 2,
            bkg_free: 4,
            id_scale: 0.5,
            sketch_dim: 3,
            sigma_data: 0.05,
            world_seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn dim(&self) -> usize {
        self.face_dim + self.bkg_dim
    }

    pub fn validate(&self) -> Result<()> {
        let face_cols = self.num_ids + self.exp_dim + self.pose_dim;
        if self.face_dim < face_cols {
            return Err(Error::Config(format!(
                "face_dim {} cannot hold {} identity+expression+pose factors",
                self.face_dim, face_cols
            )));
        }
        if self.bkg_dim < self.bkg_free + self.pose_dim {
            return Err(Error::Config(format!(
                "bkg_dim {} cannot hold {} background+pose factors",
                self.bkg_dim,
                self.bkg_free + self.pose_dim
            )));
        }
        if self.num_ids < 2 || self.exp_dim == 0 || self.pose_dim == 0 || self.sketch_dim == 0 {
            return Err(Error::Config("world needs num_ids >= 2 and nonzero exp/pose/sketch dims".into()));
        }
        if !(self.sigma_data >= 0.0 && self.sigma_data.is_finite()) || self.id_scale.is_nan() || self.id_scale <= 0.0 {
            return Err(Error::Config("sigma_data must be >= 0 and id_scale > 0".into()));
        }
        Ok(())
    }
}

/// One draw from the world with its ground-truth factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSample {
    pub x0: Array,
    pub id_class: usize,
    pub exp_factor: Array,
    pub pose_factor: Array,
    pub bkg_factor: Array,
    /// 1 on the face region, 0 on the background.
    pub mask: Array,
}

/// Exact linear read-outs acting on full data vectors (background columns
/// are zero where a read-out only looks at the face).
#[derive(Debug, Clone)]
pub struct OracleEncoders {
    /// `K × D`: least-squares identity coefficients; noiseless samples map to
    /// one-hot vectors.
    pub retrieval: DMatrix<f64>,
    /// Three `sketch_dim × D` maps `S_i · retrieval`, each normalized after
    /// application.
    pub id_maps: Vec<DMatrix<f64>>,
    /// `exp_dim × D`.
    pub expression: DMatrix<f64>,
    /// `pose_dim × D`, reading pose from the face region.
    pub pose: DMatrix<f64>,
}

pub const NUM_ID_ENCODERS: usize = 3;

impl OracleEncoders {
    fn apply(m: &DMatrix<f64>, x: &Array) -> Result<DVector<f64>> {
        if x.len() != m.ncols() {
            return Err(Error::ShapeMismatch {
                expected: vec![m.ncols()],
                got: x.shape().to_vec(),
            });
        }
        Ok(m * DVector::from_column_slice(x.as_slice()))
    }

    pub fn identity_coefficients(&self, x: &Array) -> Result<Array> {
        Ok(Array::vector(Self::apply(&self.retrieval, x)?.as_slice().to_vec()))
    }

    /// Unnormalized output of identity encoder `i`.
    pub fn identity_raw(&self, i: usize, x: &Array) -> Result<Array> {
        Ok(Array::vector(Self::apply(&self.id_maps[i], x)?.as_slice().to_vec()))
    }

    /// Unit-normalized outputs of all identity encoders.
    pub fn identity_embeddings(&self, x: &Array) -> Result<Vec<Array>> {
        (0..self.id_maps.len())
            .map(|i| {
                let v = self.identity_raw(i, x)?;
                let n = v.norm();
                if n == 0.0 {
                    return Err(Error::ZeroNorm);
                }
                Ok(v.scale(1.0 / n))
            })
            .collect()
    }

    pub fn expression(&self, x: &Array) -> Result<Array> {
        Ok(Array::vector(Self::apply(&self.expression, x)?.as_slice().to_vec()))
    }

    pub fn pose(&self, x: &Array) -> Result<Array> {
        Ok(Array::vector(Self::apply(&self.pose, x)?.as_slice().to_vec()))
    }

    pub fn identity_dim(&self) -> usize {
        self.id_maps[0].nrows()
    }

    pub fn expression_dim(&self) -> usize {
        self.expression.nrows()
    }
}

/// Built world: generators, mask and encoders.
#[derive(Debug, Clone)]
pub struct World {
    pub spec: WorldSpec,
    /// `face_dim × K` identity prototypes.
    pub a_id: DMatrix<f64>,
    pub a_exp: DMatrix<f64>,
    pub a_pose_face: DMatrix<f64>,
    pub a_pose_bkg: DMatrix<f64>,
    pub a_bkg: DMatrix<f64>,
    pub mask: Array,
    pub encoders: OracleEncoders,
}

fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.normal())
}

fn column_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let tol = max * 1e-10 * m.nrows().max(m.ncols()) as f64;
    sv.iter().filter(|s| **s > tol).count()
}

impl World {
    pub fn new(spec: WorldSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = Rng::new(spec.world_seed);
        let (f, b) = (spec.face_dim, spec.bkg_dim);
        let a_id = gaussian_matrix(&mut rng, f, spec.num_ids, spec.id_scale);
        let a_exp = gaussian_matrix(&mut rng, f, spec.exp_dim, 0.5);
        let a_pose_face = gaussian_matrix(&mut rng, f, spec.pose_dim, 0.5);
        let a_pose_bkg = gaussian_matrix(&mut rng, b, spec.pose_dim, 0.5);
        let a_bkg = gaussian_matrix(&mut rng, b, spec.bkg_free, 0.5);

        let face_joint = DMatrix::from_columns(
            &a_id
                .column_iter()
                .chain(a_exp.column_iter())
                .chain(a_pose_face.column_iter())
                .map(|c| c.into_owned())
                .collect::<Vec<_>>(),
        );
        let bkg_joint = DMatrix::from_columns(
            &a_pose_bkg
                .column_iter()
                .chain(a_bkg.column_iter())
                .map(|c| c.into_owned())
                .collect::<Vec<_>>(),
        );
        for (name, m) in [
            ("face generator", &face_joint),
            ("background generator", &bkg_joint),
            ("identity prototypes", &a_id),
        ] {
            if column_rank(m) < m.ncols() {
                return Err(Error::InvalidArgument(format!("{name} is rank deficient")));
            }
        }

        let pinv = face_joint
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let d = spec.dim();
        // Embed a face_dim-column read-out into a D-column map.
        let widen = |rows: DMatrix<f64>| {
            let mut full = DMatrix::zeros(rows.nrows(), d);
            full.view_mut((0, 0), (rows.nrows(), f)).copy_from(&rows);
            full
        };
        let (k, m, g) = (spec.num_ids, spec.exp_dim, spec.pose_dim);
        let retrieval = widen(pinv.rows(0, k).into_owned());
        let expression = widen(pinv.rows(k, m).into_owned());
        let pose = widen(pinv.rows(k + m, g).into_owned());
        let id_maps = (0..NUM_ID_ENCODERS)
            .map(|_| gaussian_matrix(&mut rng, spec.sketch_dim, k, 1.0) * &retrieval)
            .collect();

        let mut mask = Array::zeros(&[d]);
        for i in 0..f {
            mask[i] = 1.0;
        }
        Ok(Self {
            spec,
            a_id,
            a_exp,
            a_pose_face,
            a_pose_bkg,
            a_bkg,
            mask,
            encoders: OracleEncoders {
                retrieval,
                id_maps,
                expression,
                pose,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Generator output without observation noise.
    pub fn render(&self, id_class: usize, exp: &[f64], pose: &[f64], bkg: &[f64]) -> Array {
        let (f, b) = (self.spec.face_dim, self.spec.bkg_dim);
        let e = DVector::from_column_slice(exp);
        let g = DVector::from_column_slice(pose);
        let bf = DVector::from_column_slice(bkg);
        let face = self.a_id.column(id_class) + &self.a_exp * &e + &self.a_pose_face * &g;
        let back = &self.a_bkg * &bf + &self.a_pose_bkg * &g;
        let mut out = Vec::with_capacity(f + b);
        out.extend(face.iter());
        out.extend(back.iter());
        Array::vector(out)
    }

    /// Sample with the given factors plus `σ_data` observation noise.
    pub fn sample_with(
        &self,
        id_class: usize,
        exp: &[f64],
        pose: &[f64],
        bkg: &[f64],
        rng: &mut Rng,
    ) -> FactorSample {
        let mut x0 = self.render(id_class, exp, pose, bkg);
        if self.spec.sigma_data > 0.0 {
            for v in x0.as_mut_slice() {
                *v += self.spec.sigma_data * rng.normal();
            }
        }
        FactorSample {
            x0,
            id_class,
            exp_factor: Array::vector(exp.to_vec()),
            pose_factor: Array::vector(pose.to_vec()),
            bkg_factor: Array::vector(bkg.to_vec()),
            mask: self.mask.clone(),
        }
    }

    pub fn random_factors(&self, rng: &mut Rng) -> (usize, Vec<f64>, Vec<f64>, Vec<f64>) {
        let k = rng.below(self.spec.num_ids);
        let e = rng.normal_vec(self.spec.exp_dim);
        let g = rng.normal_vec(self.spec.pose_dim);
        let b = rng.normal_vec(self.spec.bkg_free);
        (k, e, g, b)
    }

    /// Unit-normalized embedding of each class prototype under identity
    /// encoder `i`.
    pub fn prototype_embeddings(&self, i: usize) -> Vec<Array> {
        let zeros_e = vec![0.0; self.spec.exp_dim];
        let zeros_g = vec![0.0; self.spec.pose_dim];
        let zeros_b = vec![0.0; self.spec.bkg_free];
        (0..self.spec.num_ids)
            .map(|k| {
                let x = self.render(k, &zeros_e, &zeros_g, &zeros_b);
                let v = self.encoders.identity_raw(i, &x).expect("dims match");
                v.scale(1.0 / v.norm())
            })
            .collect()
    }
}

/// Random draw from the world.
pub fn sample_world(world: &World, rng: &mut Rng) -> FactorSample {
    let (k, e, g, b) = world.random_factors(rng);
    world.sample_with(k, &e, &g, &b, rng)
}

/// Zero the face region (`mask == 1`) and keep the background.
pub fn mask_background(x: &Array, mask: &Array) -> Result<Array> {
    x.check_same_shape(mask)?;
    let data = x
        .as_slice()
        .iter()
        .zip(mask.as_slice())
        .map(|(v, m)| if *m != 0.0 { 0.0 } else { *v })
        .collect();
    Array::from_vec(x.shape(), data)
}

/// Toy stand-in for the latent decoder.
pub fn decode(z: &Array) -> Array {
    z.clone()
}

/// Linear interpolation between two expression embeddings.
pub fn exp_travel(e0: &Array, e1: &Array, alpha: f64) -> Result<Array> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    e0.lincomb(1.0 - alpha, e1, alpha)
}

/// Exact noise predictor when the data is the point mass at `c`.
#[derive(Debug, Clone)]
pub struct PointMassOracle {
    schedule: NoiseSchedule,
    c: Array,
}

pub fn oracle_denoiser_pointmass(s: &NoiseSchedule, c: Array) -> PointMassOracle {
    PointMassOracle {
        schedule: s.clone(),
        c,
    }
}

impl Denoiser for PointMassOracle {
    fn predict(&self, zt: &Array, t: usize, _: &ConditionBundle) -> Result<Array> {
        self.schedule.check_t(t)?;
        let ab = self.schedule.alpha_bar(t);
        let inv = 1.0 / (1.0 - ab).sqrt();
        zt.lincomb(inv, &self.c, -ab.sqrt() * inv)
    }
}

/// Exact noise predictor for isotropic Gaussian data `N(μ, σ²I)`.
#[derive(Debug, Clone)]
pub struct GaussianOracle {
    schedule: NoiseSchedule,
    mu: Array,
    sigma: f64,
}

pub fn oracle_denoiser_gaussian(s: &NoiseSchedule, mu: Array, sigma: f64) -> Result<GaussianOracle> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
    }
    Ok(GaussianOracle {
        schedule: s.clone(),
        mu,
        sigma,
    })
}

impl GaussianOracle {
    /// `E[x0 | z_t] = (√ᾱ σ² z_t + (1 − ᾱ) μ) / (ᾱ σ² + 1 − ᾱ)`.
    pub fn posterior_mean(&self, zt: &Array, t: usize) -> Result<Array> {
        self.schedule.check_t(t)?;
        let ab = self.schedule.alpha_bar(t);
        let s2 = self.sigma * self.sigma;
        let d = ab * s2 + 1.0 - ab;
        zt.lincomb(ab.sqrt() * s2 / d, &self.mu, (1.0 - ab) / d)
    }
}

impl Denoiser for GaussianOracle {
    fn predict(&self, zt: &Array, t: usize, _: &ConditionBundle) -> Result<Array> {
        let m = self.posterior_mean(zt, t)?;
        let ab = self.schedule.alpha_bar(t);
        let inv = 1.0 / (1.0 - ab).sqrt();
        zt.lincomb(inv, &m, -ab.sqrt() * inv)
    }
}

//! Sampling-method and ablation studies.
//!
//! Every variant trains from the same seed, so initialization, training
//! batches, curve probes and the evaluation set are shared. Only the switch
//! that defines the variant differs.

use crate::denoiser::{build_condition, DenoiserParams};
use crate::error::{Error, Result};
use crate::numerics::{sub_seed, Array, Rng};
use crate::par::{map_indexed, Exec};
use crate::samplers::{estimate, generate, Estimator, SamplerConfig};
use crate::schedule::NoiseSchedule;
use crate::training::{draw_sample, train, LossRecord, TrainConfig, TrainSample};
use crate::world::{sample_world, FactorSample, World};

use super::metrics::{metric_exp_error, metric_id_retrieval, metric_mse, metric_pose_error, MetricsReport};
use super::report::{StudyReport, StudyRow};

/// Evaluation budgets shared by all variants of a study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyConfig {
    /// Swap generations per evaluated model.
    pub eval_size: usize,
    /// Optimizer steps between reconstruction-curve checkpoints.
    pub curve_every: usize,
    /// Held-out reconstruction examples per curve checkpoint.
    pub curve_probes: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            eval_size: 512,
            curve_every: 25,
            curve_probes: 256,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_size == 0 || self.curve_every == 0 || self.curve_probes == 0 {
            return Err(Error::Config("eval_size, curve_every and curve_probes must be >= 1".into()));
        }
        Ok(())
    }
}

/// A labelled training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub train: TrainConfig,
}

impl Variant {
    fn new(label: &str, train: TrainConfig) -> Self {
        Self {
            label: label.to_string(),
            train,
        }
    }
}

/// No constraint losses, then one variant per estimator.
pub fn sampling_variants(base: &TrainConfig) -> Vec<Variant> {
    let mut out = vec![Variant::new(
        "no_id_exp_losses",
        TrainConfig {
            estimator: None,
            use_id_exp_losses: false,
            ..base.clone()
        },
    )];
    for e in Estimator::ALL {
        out.push(Variant::new(
            e.name(),
            TrainConfig {
                estimator: Some(e),
                use_id_exp_losses: true,
                ..base.clone()
            },
        ));
    }
    out
}

/// Full model, background only at inference, and fewer identity encoders.
pub fn ablation_variants(base: &TrainConfig) -> Vec<Variant> {
    let full = TrainConfig {
        use_bkg_condition: true,
        num_id_embeds: 3,
        ..base.clone()
    };
    vec![
        Variant::new("full", full.clone()),
        Variant::new(
            "wo_bkg_condition",
            TrainConfig {
                use_bkg_condition: false,
                ..full.clone()
            },
        ),
        Variant::new(
            "num_id_embeds_2",
            TrainConfig {
                num_id_embeds: 2,
                ..full.clone()
            },
        ),
        Variant::new(
            "num_id_embeds_1",
            TrainConfig {
                num_id_embeds: 1,
                ..full
            },
        ),
    ]
}

/// Face swap task: background of `bkg`, identity of `id_src`, expression of
/// `exp_src`.
#[derive(Debug, Clone)]
pub struct SwapItem {
    pub bkg: FactorSample,
    pub id_src: FactorSample,
    pub exp_src: FactorSample,
    /// Noiseless render of the intended result.
    pub ideal: Array,
}

/// `n` swap tasks with independent identity, expression and background
/// sources.
pub fn swap_set(world: &World, n: usize, seed: u64) -> Vec<SwapItem> {
    (0..n)
        .map(|i| {
            let mut rng = Rng::new(sub_seed(seed, i as u64));
            let bkg = sample_world(world, &mut rng);
            let id_src = sample_world(world, &mut rng);
            let exp_src = sample_world(world, &mut rng);
            let ideal = world.render(
                id_src.id_class,
                exp_src.exp_factor.as_slice(),
                bkg.pose_factor.as_slice(),
                bkg.bkg_factor.as_slice(),
            );
            SwapItem {
                bkg,
                id_src,
                exp_src,
                ideal,
            }
        })
        .collect()
}

/// Generate every swap in `items` with `num_id_embeds` identity embeddings.
#[allow(clippy::too_many_arguments)]
pub fn generate_swaps(
    world: &World,
    params: &DenoiserParams,
    s: &NoiseSchedule,
    sampler: &SamplerConfig,
    items: &[SwapItem],
    num_id_embeds: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<Array>> {
    map_indexed(exec, items.len(), |i| {
        let it = &items[i];
        let cond = build_condition(&it.bkg, &it.id_src, &it.exp_src, &world.encoders)?.with_id_embeds(num_id_embeds);
        let mut rng = Rng::new(sub_seed(seed, i as u64));
        generate(s, params, &cond, sampler, &mut rng, world.dim())
    })
    .into_iter()
    .collect()
}

/// Metrics of generations against their swap tasks.
pub fn score_swaps(world: &World, items: &[SwapItem], gen: &[Array]) -> Result<MetricsReport> {
    let intended: Vec<usize> = items.iter().map(|it| it.id_src.id_class).collect();
    let exp_src: Vec<Array> = items.iter().map(|it| it.exp_src.x0.clone()).collect();
    let poses: Vec<Array> = items.iter().map(|it| it.bkg.pose_factor.clone()).collect();
    let ideal: Vec<Array> = items.iter().map(|it| it.ideal.clone()).collect();
    Ok(MetricsReport {
        id_retrieval: metric_id_retrieval(world, gen, &intended)?,
        exp_error: metric_exp_error(&world.encoders, gen, &exp_src)?,
        pose_error: metric_pose_error(&world.encoders, gen, &poses)?,
        mse: metric_mse(gen, &ideal)?,
    })
}

/// Swap-task metrics of a trained model on the evaluation set derived from
/// `cfg.seed`.
pub fn evaluate(
    world: &World,
    params: &DenoiserParams,
    cfg: &TrainConfig,
    sampler: &SamplerConfig,
    eval_size: usize,
    exec: Exec,
) -> Result<MetricsReport> {
    let s = cfg.schedule()?;
    let items = swap_set(world, eval_size, sub_seed(cfg.seed, 2));
    let gen = generate_swaps(world, params, &s, sampler, &items, cfg.num_id_embeds, sub_seed(cfg.seed, 4), exec)?;
    score_swaps(world, &items, &gen)
}

/// Mean reconstruction error of the estimator used by `cfg` (one-step when
/// training is unconstrained) on fixed probes.
pub fn reconstruction_mse(
    s: &NoiseSchedule,
    params: &DenoiserParams,
    cfg: &TrainConfig,
    probes: &[TrainSample],
    exec: Exec,
) -> Result<f64> {
    let method = cfg.estimator.unwrap_or(Estimator::OneStep);
    let errs = map_indexed(exec, probes.len(), |i| {
        let p = &probes[i];
        let zt = s.q_sample(&p.x0, p.t, &p.eps)?;
        let x0 = estimate(s, params, &zt, p.t, &p.cond, method, None)?;
        let d = x0.sub(&p.x0)?;
        Ok::<f64, Error>(d.dot(&d)? / d.len() as f64)
    });
    let mut acc = 0.0;
    for e in errs {
        acc += e?;
    }
    Ok(acc / probes.len() as f64)
}

/// Reconstruction MSE after selected optimizer steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub variant: String,
    pub points: Vec<(usize, f64)>,
}

impl Curve {
    /// Trailing means over `window` consecutive checkpoints.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let v: Vec<f64> = self.points.iter().map(|p| p.1).collect();
        if window == 0 || v.len() < window {
            return Vec::new();
        }
        v.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
    }
}

/// Result of training and evaluating one variant.
#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub label: String,
    pub metrics: MetricsReport,
    pub curve: Curve,
    pub log: Vec<LossRecord>,
    /// Trained parameters of a successful run.
    pub params: Option<DenoiserParams>,
    /// Diagnostic of a failed run; metrics are NaN then.
    pub error: Option<String>,
}

pub fn run_variant(world: &World, v: &Variant, sampler: &SamplerConfig, study: &StudyConfig, exec: Exec) -> VariantOutcome {
    let mut curve = Curve {
        variant: v.label.clone(),
        points: Vec::new(),
    };
    let mut log = Vec::new();
    let mut params = None;
    let result = (|| -> Result<MetricsReport> {
        let cfg = &v.train;
        cfg.validate()?;
        let s = cfg.schedule()?;
        let probe_seed = sub_seed(cfg.seed, 3);
        let probes = (0..study.curve_probes)
            .map(|i| draw_sample(world, cfg, s.num_steps(), &mut Rng::new(sub_seed(probe_seed, i as u64))))
            .collect::<Result<Vec<_>>>()?;
        let init = crate::training::TrainState::new(&world.spec, cfg)?;
        curve.points.push((0, reconstruction_mse(&s, &init.params, cfg, &probes, exec)?));
        let (state, l) = train(world, cfg, exec, |st, _| {
            if st.step % study.curve_every == 0 {
                curve.points.push((st.step, reconstruction_mse(&s, &st.params, cfg, &probes, exec)?));
            }
            Ok(())
        })?;
        log = l;
        let m = evaluate(world, &state.params, cfg, sampler, study.eval_size, exec)?;
        params = Some(state.params);
        Ok(m)
    })();
    let (metrics, error) = match result {
        Ok(m) => (m, None),
        Err(e) => (MetricsReport::failed(), Some(e.to_string())),
    };
    VariantOutcome {
        label: v.label.clone(),
        metrics,
        curve,
        log,
        params,
        error,
    }
}

/// Outcome of a whole study.
#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub report: StudyReport,
    pub variants: Vec<VariantOutcome>,
}

/// Train and evaluate every variant. Variants run in parallel under
/// [`Exec::Parallel`]; a failed variant becomes a NaN row.
pub fn run_study(
    world: &World,
    variants: &[Variant],
    sampler: &SamplerConfig,
    study: &StudyConfig,
    config_hash: u64,
    exec: Exec,
) -> Result<StudyOutcome> {
    study.validate()?;
    let outcomes = map_indexed(exec, variants.len(), |i| run_variant(world, &variants[i], sampler, study, exec));
    let rows = variants
        .iter()
        .zip(&outcomes)
        .map(|(v, o)| StudyRow::new(&v.label, o.metrics, v.train.seed, v.train.steps))
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyOutcome {
        report: StudyReport::new(rows, Some(config_hash))?,
        variants: outcomes,
    })
}

pub fn run_sampling_study(
    world: &World,
    base: &TrainConfig,
    sampler: &SamplerConfig,
    study: &StudyConfig,
    config_hash: u64,
    exec: Exec,
) -> Result<StudyOutcome> {
    run_study(world, &sampling_variants(base), sampler, study, config_hash, exec)
}

pub fn run_ablation_study(
    world: &World,
    base: &TrainConfig,
    sampler: &SamplerConfig,
    study: &StudyConfig,
    config_hash: u64,
    exec: Exec,
) -> Result<StudyOutcome> {
    run_study(world, &ablation_variants(base), sampler, study, config_hash, exec)
}

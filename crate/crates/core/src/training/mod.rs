//! Composite-loss training of the conditional denoiser.
//!
//! Each sample contributes the denoising loss at a random timestep. When a
//! clean-sample estimator is configured, the prediction made for that loss is
//! reused as the estimator's first call, the estimate is decoded and scored
//! by the identity and expression encoders, and gradients of those scores
//! flow back through every denoiser call of the estimator.

mod checkpoint;
mod losses;

use std::collections::BTreeMap;
use std::fmt::Write as _;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION};
pub use losses::{loss_dm, loss_exp, loss_id, total_loss, LossParts};

use nalgebra::DVector;

use crate::denoiser::{forward_cached, ConditionBundle, DenoiserConfig, DenoiserParams};
use crate::error::{Error, Result};
use crate::numerics::{adamw_step, fmt_sig9, gauss, sub_seed, AdamWConfig, Array, OptimState, Rng};
use crate::par::{map_indexed, Exec};
use crate::samplers::{Estimator, MidpointPath};
use crate::schedule::NoiseSchedule;
use crate::world::{decode, mask_background, OracleEncoders, World, WorldSpec, NUM_ID_ENCODERS};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Clean-sample estimator for the identity/expression losses; `None`
    /// trains with the denoising loss alone.
    pub estimator: Option<Estimator>,
    pub num_train_timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// When off, the background channel carries the face mask during
    /// training; the masked background is only supplied at inference.
    pub use_bkg_condition: bool,
    pub num_id_embeds: usize,
    pub use_id_exp_losses: bool,
    /// Scale each sample's identity and expression terms by `ᾱ_t`. The clean
    /// estimate amplifies noise-prediction error by `1/√ᾱ_t`, so unweighted
    /// terms at large `t` swamp the denoising loss.
    pub signal_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        Self {
            lambda1: 0.003,
            lambda2: 0.01,
            steps: 2000,
            batch_size: 32,
            estimator: Some(Estimator::ImprovedMidpoint),
            num_train_timesteps: 100,
            beta_start: 1e-3,
            beta_end: 0.2,
            lr: adam.lr,
            weight_decay: adam.weight_decay,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            seed: 0,
            use_bkg_condition: true,
            num_id_embeds: NUM_ID_ENCODERS,
            use_id_exp_losses: true,
            signal_weighting: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad(format!("lambda1/lambda2 must be >= 0, got {}, {}", self.lambda1, self.lambda2));
        }
        if !(1..=NUM_ID_ENCODERS).contains(&self.num_id_embeds) {
            return bad(format!("num_id_embeds must lie in 1..={NUM_ID_ENCODERS}, got {}", self.num_id_embeds));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.weight_decay >= 0.0 && self.adam_eps > 0.0) {
            return bad("lr and adam_eps must be > 0, weight_decay >= 0".into());
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        self.schedule().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.num_train_timesteps, self.beta_start, self.beta_end)
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// Whether the identity/expression pathway is active.
    pub fn constrained(&self) -> bool {
        self.use_id_exp_losses && self.estimator.is_some()
    }

    /// Learning-rate multiplier at `step` (0-based): flat for the first half,
    /// then linear decay towards zero.
    pub fn lr_scale(&self, step: usize) -> f64 {
        let half = self.steps / 2;
        if step < half {
            return 1.0;
        }
        let span = (self.steps - half) as f64;
        (self.steps - step) as f64 / span
    }

    pub fn denoiser_config(&self, spec: &WorldSpec) -> DenoiserConfig {
        DenoiserConfig::for_dims(spec.dim(), spec.sketch_dim, spec.exp_dim)
    }
}

/// One training example: a target, its condition and the loss targets.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub x0: Array,
    pub cond: ConditionBundle,
    pub id_target: Vec<Array>,
    pub exp_target: Array,
    pub t: usize,
    pub eps: Array,
}

/// Reconstruction example: identity comes from a fresh sample of the same
/// class, expression from the target itself.
pub fn draw_sample(world: &World, cfg: &TrainConfig, num_steps: usize, rng: &mut Rng) -> Result<TrainSample> {
    let (k, e, g, b) = world.random_factors(rng);
    let target = world.sample_with(k, &e, &g, &b, rng);
    let (_, e2, g2, b2) = world.random_factors(rng);
    let id_src = world.sample_with(k, &e2, &g2, &b2, rng);
    let enc = &world.encoders;
    let mut id_target = enc.identity_embeddings(&id_src.x0)?;
    id_target.truncate(cfg.num_id_embeds);
    let exp_target = enc.expression(&target.x0)?;
    let masked_bkg = if cfg.use_bkg_condition {
        mask_background(&target.x0, &target.mask)?
    } else {
        target.mask.clone()
    };
    let t = 1 + rng.below(num_steps);
    let eps = gauss(rng, target.x0.shape());
    Ok(TrainSample {
        cond: ConditionBundle {
            masked_bkg,
            id_embeds: id_target.clone(),
            exp_embed: exp_target.clone(),
        },
        x0: target.x0,
        id_target,
        exp_target,
        t,
        eps,
    })
}

/// Batch for optimizer step `step`; depends only on the seed and the step.
pub fn draw_batch(world: &World, cfg: &TrainConfig, num_steps: usize, step: usize) -> Result<Vec<TrainSample>> {
    let step_seed = sub_seed(sub_seed(cfg.seed, 1), step as u64);
    (0..cfg.batch_size)
        .map(|i| draw_sample(world, cfg, num_steps, &mut Rng::new(sub_seed(step_seed, i as u64))))
        .collect()
}

fn mat_vec(m: &nalgebra::DMatrix<f64>, x: &Array) -> Array {
    Array::vector((m * DVector::from_column_slice(x.as_slice())).as_slice().to_vec())
}

fn mat_t_vec(m: &nalgebra::DMatrix<f64>, g: &Array) -> Array {
    Array::vector(m.tr_mul(&DVector::from_column_slice(g.as_slice())).as_slice().to_vec())
}

/// Identity and expression losses of a clean estimate and their gradient
/// with respect to it.
fn encoder_losses(
    enc: &OracleEncoders,
    x: &Array,
    id_target: &[Array],
    exp_target: &Array,
    lambda1: f64,
    lambda2: f64,
) -> Result<(f64, f64, Array)> {
    let n = id_target.len();
    let mut grad = Array::zeros_like(x);
    let mut l_id = 0.0;
    for (i, target) in id_target.iter().enumerate() {
        let v = mat_vec(&enc.id_maps[i], x);
        let (l, gv) = losses::one_minus_cos_grad(&v, target)?;
        l_id += l / n as f64;
        grad.axpy(lambda1 / n as f64, &mat_t_vec(&enc.id_maps[i], &gv))?;
    }
    let e = mat_vec(&enc.expression, x);
    let l_exp = loss_exp(exp_target, &e)?;
    let ge = e.sub(exp_target)?.scale(2.0 / e.len() as f64);
    grad.axpy(lambda2, &mat_t_vec(&enc.expression, &ge))?;
    Ok((l_id, l_exp, grad))
}

/// Loss terms of one sample and, when `grads` is given, their weighted total
/// gradient accumulated into it.
pub fn sample_loss(
    p: &DenoiserParams,
    s: &NoiseSchedule,
    enc: &OracleEncoders,
    smp: &TrainSample,
    cfg: &TrainConfig,
    grads: Option<&mut BTreeMap<String, Array>>,
) -> Result<LossParts> {
    let t = smp.t;
    let zt = s.q_sample(&smp.x0, t, &smp.eps)?;
    let first = forward_cached(p, &zt, t, &smp.cond)?;
    let eps_hat = &first.output;
    let l_dm = loss_dm(&smp.eps, eps_hat)?;
    let mut g_eps = eps_hat.sub(&smp.eps)?.scale(2.0 / eps_hat.len() as f64);

    let Some(method) = cfg.estimator.filter(|_| cfg.use_id_exp_losses) else {
        if let Some(grads) = grads {
            first.backward(p, &g_eps, grads)?;
        }
        return Ok(LossParts { l_dm, l_id: 0.0, l_exp: 0.0 });
    };

    // x₀* = a·z + b·ε̂ at the level where the estimate is read off.
    let inv_coeffs = |t: usize| {
        let ab = s.alpha_bar(t);
        (1.0 / ab.sqrt(), -(1.0 - ab).sqrt() / ab.sqrt())
    };
    let path = MidpointPath::new(s, t, method)?;
    let second = match path {
        None => None,
        Some(path) => {
            let z1 = zt.lincomb(path.p, eps_hat, path.q)?;
            let cache = forward_cached(p, &z1, path.t1, &smp.cond)?;
            Some((path, z1, cache))
        }
    };
    let x0_star = match &second {
        None => {
            let (a, b) = inv_coeffs(t);
            zt.lincomb(a, eps_hat, b)?
        }
        Some((path, z1, cache)) => {
            let (a, b) = inv_coeffs(path.t1);
            z1.lincomb(a, &cache.output, b)?
        }
    };
    let x = decode(&x0_star);
    let w = if cfg.signal_weighting { s.alpha_bar(t) } else { 1.0 };
    let (l_id, l_exp, g_x) = encoder_losses(enc, &x, &smp.id_target, &smp.exp_target, w * cfg.lambda1, w * cfg.lambda2)?;
    let (l_id, l_exp) = (w * l_id, w * l_exp);

    if let Some(grads) = grads {
        match &second {
            None => {
                let (_, b) = inv_coeffs(t);
                g_eps.axpy(b, &g_x)?;
            }
            Some((path, _, cache)) => {
                let (a, b) = inv_coeffs(path.t1);
                let dz1_direct = g_x.scale(a);
                let dz1_net = cache.backward(p, &g_x.scale(b), grads)?;
                let g_z1 = dz1_direct.add(&dz1_net)?;
                // z_t itself does not depend on the parameters, only ε̂_t does.
                g_eps.axpy(path.q, &g_z1)?;
            }
        }
        first.backward(p, &g_eps, grads)?;
    }
    Ok(LossParts { l_dm, l_id, l_exp })
}

/// Parameters, optimizer moments and the number of completed steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: DenoiserParams,
    pub optim: OptimState,
    pub step: usize,
}

impl TrainState {
    pub fn new(spec: &WorldSpec, cfg: &TrainConfig) -> Result<Self> {
        let mut rng = Rng::new(sub_seed(cfg.seed, 0));
        let params = DenoiserParams::init(cfg.denoiser_config(spec), &mut rng)?;
        let optim = OptimState::new(cfg.adamw(), &params.tensors);
        Ok(Self { params, optim, step: 0 })
    }
}

/// Batch-mean losses after one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub parts: LossParts,
    pub total: f64,
}

/// Gradient of the batch-mean total loss and the batch-mean parts.
pub fn batch_gradient(
    p: &DenoiserParams,
    s: &NoiseSchedule,
    enc: &OracleEncoders,
    batch: &[TrainSample],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<(LossParts, BTreeMap<String, Array>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let per_sample = map_indexed(exec, batch.len(), |i| {
        let mut g = p.zeros_like();
        sample_loss(p, s, enc, &batch[i], cfg, Some(&mut g)).map(|parts| (parts, g))
    });
    let scale = 1.0 / batch.len() as f64;
    let mut grads = p.zeros_like();
    let mut mean = LossParts::default();
    // Fixed reduction order keeps results independent of thread scheduling.
    for (i, r) in per_sample.into_iter().enumerate() {
        let (parts, g) = r?;
        if !parts.is_finite() {
            return Err(Error::NonFinite(format!(
                "sample {i} (t = {}): L_DM = {}, L_id = {}, L_exp = {}",
                batch[i].t, parts.l_dm, parts.l_id, parts.l_exp
            )));
        }
        mean.l_dm += scale * parts.l_dm;
        mean.l_id += scale * parts.l_id;
        mean.l_exp += scale * parts.l_exp;
        for (name, acc) in grads.iter_mut() {
            acc.axpy(scale, &g[name])?;
        }
    }
    Ok((mean, grads))
}

/// One optimizer step on `batch`. The state is left untouched on error.
pub fn train_step(
    state: &mut TrainState,
    s: &NoiseSchedule,
    enc: &OracleEncoders,
    batch: &[TrainSample],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<LossRecord> {
    let (parts, grads) = batch_gradient(&state.params, s, enc, batch, cfg, exec)?;
    let total = total_loss(parts, cfg.lambda1, cfg.lambda2);
    if !total.is_finite() || grads.values().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "step {}: total loss {total}, L_DM {}, L_id {}, L_exp {}",
            state.step, parts.l_dm, parts.l_id, parts.l_exp
        )));
    }
    let mut params = state.params.tensors.clone();
    let mut optim = state.optim.clone();
    adamw_step(&mut params, &grads, &mut optim, cfg.lr_scale(state.step))?;
    if params.values().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite(format!("step {}: parameters became non-finite", state.step)));
    }
    state.params.tensors = params;
    state.optim = optim;
    let record = LossRecord {
        step: state.step,
        parts,
        total,
    };
    state.step += 1;
    Ok(record)
}

/// Run `cfg.steps` optimizer steps from a fresh initialization. `observe` is
/// called after every step.
pub fn train<F>(world: &World, cfg: &TrainConfig, exec: Exec, mut observe: F) -> Result<(TrainState, Vec<LossRecord>)>
where
    F: FnMut(&TrainState, &LossRecord) -> Result<()>,
{
    cfg.validate()?;
    let s = cfg.schedule()?;
    let mut state = TrainState::new(&world.spec, cfg)?;
    let mut log = Vec::with_capacity(cfg.steps);
    while state.step < cfg.steps {
        let batch = draw_batch(world, cfg, s.num_steps(), state.step)?;
        let rec = train_step(&mut state, &s, &world.encoders, &batch, cfg, exec)?;
        observe(&state, &rec)?;
        log.push(rec);
    }
    Ok((state, log))
}

/// `step,L_DM,L_id,L_exp,total` with 9 significant digits.
pub fn training_log_csv(log: &[LossRecord]) -> String {
    let mut out = String::from("step,L_DM,L_id,L_exp,total\n");
    for r in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.step,
            fmt_sig9(r.parts.l_dm),
            fmt_sig9(r.parts.l_id),
            fmt_sig9(r.parts.l_exp),
            fmt_sig9(r.total)
        );
    }
    out
}

fn estimator_code(e: Option<Estimator>) -> f64 {
    match e {
        None => 0.0,
        Some(Estimator::OneStep) => 1.0,
        Some(Estimator::Midpoint) => 2.0,
        Some(Estimator::ImprovedMidpoint) => 3.0,
    }
}

fn estimator_from_code(x: f64) -> Result<Option<Estimator>> {
    Ok(match x as i64 {
        0 => None,
        1 => Some(Estimator::OneStep),
        2 => Some(Estimator::Midpoint),
        3 => Some(Estimator::ImprovedMidpoint),
        _ => return Err(Error::Malformed(format!("estimator code {x}"))),
    })
}

fn flag(x: f64) -> bool {
    x != 0.0
}

impl TrainState {
    /// Everything needed to resume training or to sample: parameters,
    /// optimizer moments, schedule, configuration scalars and the step.
    pub fn to_checkpoint(&self, cfg: &TrainConfig, spec: &WorldSpec) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        for (k, v) in &self.params.tensors {
            c.insert(format!("param.{k}"), v.clone());
        }
        for (k, v) in &self.optim.m {
            c.insert(format!("adam.m.{k}"), v.clone());
        }
        for (k, v) in &self.optim.v {
            c.insert(format!("adam.v.{k}"), v.clone());
        }
        c.insert_scalar("adam.step", self.optim.step as f64);
        c.insert("schedule.betas", Array::vector(cfg.schedule()?.betas().to_vec()));
        c.insert_scalar("step", self.step as f64);

        let dc = &self.params.config;
        for (k, v) in [
            ("data_dim", dc.data_dim),
            ("tokens", dc.tokens),
            ("width", dc.width),
            ("attn_dim", dc.attn_dim),
            ("cond_width", dc.cond_width),
            ("adapter_hidden", dc.adapter_hidden),
            ("blocks", dc.blocks),
            ("time_dim", dc.time_dim),
            ("id_embed_dim", dc.id_embed_dim),
            ("exp_embed_dim", dc.exp_embed_dim),
        ] {
            c.insert_scalar(format!("arch.{k}"), v as f64);
        }
        c.insert_scalar("arch.tie_id_adapters", dc.tie_id_adapters as u8 as f64);

        for (k, v) in [
            ("lambda1", cfg.lambda1),
            ("lambda2", cfg.lambda2),
            ("steps", cfg.steps as f64),
            ("batch_size", cfg.batch_size as f64),
            ("estimator", estimator_code(cfg.estimator)),
            ("num_train_timesteps", cfg.num_train_timesteps as f64),
            ("beta_start", cfg.beta_start),
            ("beta_end", cfg.beta_end),
            ("lr", cfg.lr),
            ("weight_decay", cfg.weight_decay),
            ("adam_beta1", cfg.adam_beta1),
            ("adam_beta2", cfg.adam_beta2),
            ("adam_eps", cfg.adam_eps),
            ("use_bkg_condition", cfg.use_bkg_condition as u8 as f64),
            ("num_id_embeds", cfg.num_id_embeds as f64),
            ("use_id_exp_losses", cfg.use_id_exp_losses as u8 as f64),
            ("signal_weighting", cfg.signal_weighting as u8 as f64),
        ] {
            c.insert_scalar(format!("config.{k}"), v);
        }
        // Seeds are stored as two exact 32-bit halves.
        for (k, v) in [("config.seed", cfg.seed), ("world.world_seed", spec.world_seed)] {
            c.insert(k, Array::vector(vec![(v >> 32) as f64, (v & 0xffff_ffff) as f64]));
        }
        for (k, v) in [
            ("face_dim", spec.face_dim as f64),
            ("bkg_dim", spec.bkg_dim as f64),
            ("num_ids", spec.num_ids as f64),
            ("exp_dim", spec.exp_dim as f64),
            ("pose_dim", spec.pose_dim as f64),
            ("bkg_free", spec.bkg_free as f64),
            ("id_scale", spec.id_scale),
            ("sketch_dim", spec.sketch_dim as f64),
            ("sigma_data", spec.sigma_data),
        ] {
            c.insert_scalar(format!("world.{k}"), v);
        }
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<(Self, TrainConfig, WorldSpec)> {
        let u = |k: &str| -> Result<usize> { Ok(c.scalar(k)? as usize) };
        let seed = |k: &str| -> Result<u64> {
            let a = c.get(k)?;
            if a.len() != 2 {
                return Err(Error::Malformed(format!("'{k}' must hold two halves")));
            }
            Ok(((a[0] as u64) << 32) | a[1] as u64)
        };
        let cfg = TrainConfig {
            lambda1: c.scalar("config.lambda1")?,
            lambda2: c.scalar("config.lambda2")?,
            steps: u("config.steps")?,
            batch_size: u("config.batch_size")?,
            estimator: estimator_from_code(c.scalar("config.estimator")?)?,
            num_train_timesteps: u("config.num_train_timesteps")?,
            beta_start: c.scalar("config.beta_start")?,
            beta_end: c.scalar("config.beta_end")?,
            lr: c.scalar("config.lr")?,
            weight_decay: c.scalar("config.weight_decay")?,
            adam_beta1: c.scalar("config.adam_beta1")?,
            adam_beta2: c.scalar("config.adam_beta2")?,
            adam_eps: c.scalar("config.adam_eps")?,
            seed: seed("config.seed")?,
            use_bkg_condition: flag(c.scalar("config.use_bkg_condition")?),
            num_id_embeds: u("config.num_id_embeds")?,
            use_id_exp_losses: flag(c.scalar("config.use_id_exp_losses")?),
            signal_weighting: flag(c.scalar("config.signal_weighting")?),
        };
        let spec = WorldSpec {
            face_dim: u("world.face_dim")?,
            bkg_dim: u("world.bkg_dim")?,
            num_ids: u("world.num_ids")?,
            exp_dim: u("world.exp_dim")?,
            pose_dim: u("world.pose_dim")?,
            bkg_free: u("world.bkg_free")?,
            id_scale: c.scalar("world.id_scale")?,
            sketch_dim: u("world.sketch_dim")?,
            sigma_data: c.scalar("world.sigma_data")?,
            world_seed: seed("world.world_seed")?,
        };
        let config = DenoiserConfig {
            data_dim: u("arch.data_dim")?,
            tokens: u("arch.tokens")?,
            width: u("arch.width")?,
            attn_dim: u("arch.attn_dim")?,
            cond_width: u("arch.cond_width")?,
            adapter_hidden: u("arch.adapter_hidden")?,
            blocks: u("arch.blocks")?,
            time_dim: u("arch.time_dim")?,
            id_embed_dim: u("arch.id_embed_dim")?,
            exp_embed_dim: u("arch.exp_embed_dim")?,
            tie_id_adapters: flag(c.scalar("arch.tie_id_adapters")?),
        };
        let params = DenoiserParams::from_tensors(config, c.with_prefix("param."))?;
        let optim = OptimState {
            config: cfg.adamw(),
            step: c.scalar("adam.step")? as u64,
            m: c.with_prefix("adam.m."),
            v: c.with_prefix("adam.v."),
        };
        let betas = c.get("schedule.betas")?;
        if betas.as_slice() != cfg.schedule()?.betas() {
            return Err(Error::Malformed("stored schedule disagrees with the configuration".into()));
        }
        let state = TrainState {
            params,
            optim,
            step: u("step")?,
        };
        Ok((state, cfg, spec))
    }
}

/// `n` world samples with their factors, the mask and the generator
/// matrices, as a checkpoint container. Matrices are stored row-major.
pub fn export_dataset(world: &World, n: usize, seed: u64) -> Result<Checkpoint> {
    let spec = &world.spec;
    let mut x0 = Vec::with_capacity(n * spec.dim());
    let mut ids = Vec::with_capacity(n);
    let (mut exp, mut pose, mut bkg) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let smp = crate::world::sample_world(world, &mut Rng::new(sub_seed(seed, i as u64)));
        x0.extend_from_slice(smp.x0.as_slice());
        ids.push(smp.id_class as f64);
        exp.extend_from_slice(smp.exp_factor.as_slice());
        pose.extend_from_slice(smp.pose_factor.as_slice());
        bkg.extend_from_slice(smp.bkg_factor.as_slice());
    }
    let mut c = Checkpoint::new();
    c.insert("x0", Array::from_vec(&[n, spec.dim()], x0)?);
    c.insert("id_class", Array::vector(ids));
    c.insert("exp_factor", Array::from_vec(&[n, spec.exp_dim], exp)?);
    c.insert("pose_factor", Array::from_vec(&[n, spec.pose_dim], pose)?);
    c.insert("bkg_factor", Array::from_vec(&[n, spec.bkg_free], bkg)?);
    c.insert("mask", world.mask.clone());
    let row_major = |m: &nalgebra::DMatrix<f64>| {
        let data = (0..m.nrows()).flat_map(|r| m.row(r).iter().copied().collect::<Vec<_>>()).collect();
        Array::from_vec(&[m.nrows(), m.ncols()], data)
    };
    c.insert("gen.a_id", row_major(&world.a_id)?);
    c.insert("gen.a_exp", row_major(&world.a_exp)?);
    c.insert("gen.a_pose_face", row_major(&world.a_pose_face)?);
    c.insert("gen.a_pose_bkg", row_major(&world.a_pose_bkg)?);
    c.insert("gen.a_bkg", row_major(&world.a_bkg)?);
    Ok(c)
}

//! `key = value` run configuration.
//!
//! Keys are the field names of [`TrainConfig`], [`WorldSpec`],
//! [`SamplerConfig`] and [`StudyConfig`]. Unknown or repeated keys are
//! errors, so a typo never silently falls back to a default.

use std::collections::BTreeSet;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::samplers::{Estimator, SamplerConfig};
use crate::training::TrainConfig;
use crate::world::WorldSpec;

use super::study::StudyConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub world: WorldSpec,
    pub sampler: SamplerConfig,
    pub study: StudyConfig,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("cannot parse '{v}' for key '{key}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("key '{key}' expects true or false, got '{v}'"))),
    }
}

fn estimator_name(e: Option<Estimator>) -> &'static str {
    e.map_or("none", Estimator::name)
}

impl RunConfig {
    /// Set one key. Values are not range-checked here; see
    /// [`validate`](Self::validate).
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (t, w, s, st) = (&mut self.train, &mut self.world, &mut self.sampler, &mut self.study);
        match key {
            "lambda1" => t.lambda1 = parse(key, v)?,
            "lambda2" => t.lambda2 = parse(key, v)?,
            "steps" => t.steps = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "estimator" => {
                t.estimator = match v {
                    "none" => None,
                    other => Some(other.parse()?),
                }
            }
            "num_train_timesteps" => t.num_train_timesteps = parse(key, v)?,
            "beta_start" => t.beta_start = parse(key, v)?,
            "beta_end" => t.beta_end = parse(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "weight_decay" => t.weight_decay = parse(key, v)?,
            "adam_beta1" => t.adam_beta1 = parse(key, v)?,
            "adam_beta2" => t.adam_beta2 = parse(key, v)?,
            "adam_eps" => t.adam_eps = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "use_bkg_condition" => t.use_bkg_condition = parse_bool(key, v)?,
            "num_id_embeds" => t.num_id_embeds = parse(key, v)?,
            "use_id_exp_losses" => t.use_id_exp_losses = parse_bool(key, v)?,
            "signal_weighting" => t.signal_weighting = parse_bool(key, v)?,

            "face_dim" => w.face_dim = parse(key, v)?,
            "bkg_dim" => w.bkg_dim = parse(key, v)?,
            "num_ids" => w.num_ids = parse(key, v)?,
            "exp_dim" => w.exp_dim = parse(key, v)?,
            "pose_dim" => w.pose_dim = parse(key, v)?,
            "bkg_free" => w.bkg_free = parse(key, v)?,
            "id_scale" => w.id_scale = parse(key, v)?,
            "sketch_dim" => w.sketch_dim = parse(key, v)?,
            "sigma_data" => w.sigma_data = parse(key, v)?,
            "world_seed" => w.world_seed = parse(key, v)?,

            "method" => s.method = v.parse()?,
            "intermediate_noise" => s.intermediate_noise = parse_bool(key, v)?,
            "inference_steps" => s.inference_steps = parse(key, v)?,

            "eval_size" => st.eval_size = parse(key, v)?,
            "curve_every" => st.curve_every = parse(key, v)?,
            "curve_probes" => st.curve_probes = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Apply a config file on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected 'key = value'", no + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: key '{k}' given twice", no + 1)));
            }
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", no + 1, e.to_string().trim_start_matches("config: "))))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.world.validate()?;
        self.study.validate()?;
        self.sampler.validate(&self.train.schedule()?)?;
        Ok(())
    }

    /// Canonical text listing every key; parses back to `self`.
    pub fn render(&self) -> String {
        let (t, w, s, st) = (&self.train, &self.world, &self.sampler, &self.study);
        let lines: Vec<(&str, String)> = vec![
            ("lambda1", format!("{:?}", t.lambda1)),
            ("lambda2", format!("{:?}", t.lambda2)),
            ("steps", t.steps.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("estimator", estimator_name(t.estimator).to_string()),
            ("num_train_timesteps", t.num_train_timesteps.to_string()),
            ("beta_start", format!("{:?}", t.beta_start)),
            ("beta_end", format!("{:?}", t.beta_end)),
            ("lr", format!("{:?}", t.lr)),
            ("weight_decay", format!("{:?}", t.weight_decay)),
            ("adam_beta1", format!("{:?}", t.adam_beta1)),
            ("adam_beta2", format!("{:?}", t.adam_beta2)),
            ("adam_eps", format!("{:?}", t.adam_eps)),
            ("seed", t.seed.to_string()),
            ("use_bkg_condition", t.use_bkg_condition.to_string()),
            ("num_id_embeds", t.num_id_embeds.to_string()),
            ("use_id_exp_losses", t.use_id_exp_losses.to_string()),
            ("signal_weighting", t.signal_weighting.to_string()),
            ("face_dim", w.face_dim.to_string()),
            ("bkg_dim", w.bkg_dim.to_string()),
            ("num_ids", w.num_ids.to_string()),
            ("exp_dim", w.exp_dim.to_string()),
            ("pose_dim", w.pose_dim.to_string()),
            ("bkg_free", w.bkg_free.to_string()),
            ("id_scale", format!("{:?}", w.id_scale)),
            ("sketch_dim", w.sketch_dim.to_string()),
            ("sigma_data", format!("{:?}", w.sigma_data)),
            ("world_seed", w.world_seed.to_string()),
            ("method", s.method.name().to_string()),
            ("intermediate_noise", s.intermediate_noise.to_string()),
            ("inference_steps", s.inference_steps.to_string()),
            ("eval_size", st.eval_size.to_string()),
            ("curve_every", st.curve_every.to_string()),
            ("curve_probes", st.curve_probes.to_string()),
        ];
        lines.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// 64-bit FNV-1a of [`render`](Self::render).
    pub fn hash(&self) -> u64 {
        self.render().bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_values() {
        let text = "# study\nlambda1 = 0.5   # stronger identity\n\nestimator = none\nuse_bkg_condition=false\nmethod = midpoint\nworld_seed = 9\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.train.lambda1, 0.5);
        assert_eq!(c.train.estimator, None);
        assert!(!c.train.use_bkg_condition);
        assert_eq!(c.sampler.method, Estimator::Midpoint);
        assert_eq!(c.world.world_seed, 9);
        assert_eq!(c.train.lambda2, 0.01);
    }

    #[test]
    fn render_round_trips() {
        let mut c = RunConfig::default();
        c.train.lr = 3.3e-4;
        c.train.estimator = Some(Estimator::OneStep);
        c.world.sigma_data = 0.1;
        let back = RunConfig::parse(&c.render()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(RunConfig::default().hash(), c.hash());
    }

    #[test]
    fn errors_are_config_errors() {
        for text in [
            "lamda1 = 0.1",
            "lambda1 = abc",
            "lambda1 = -1",
            "num_id_embeds = 5",
            "estimator = euler",
            "use_bkg_condition = yes",
            "steps = 1\nsteps = 2",
            "just a line",
            "face_dim = 4",
            "inference_steps = 500",
        ] {
            let e = RunConfig::parse(text).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{text}: {e}");
            assert_eq!(e.exit_code(), 2);
        }
    }
}

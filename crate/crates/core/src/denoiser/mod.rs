//! Conditional noise predictor.
//!
//! The state vector `z_t` is concatenated with the masked background and
//! projected into a small set of tokens. Each block applies a residual SiLU
//! layer followed by residual single-head cross-attention over condition
//! tokens; every condition embedding (three identity, one expression) passes
//! through its own two-layer adapter before it becomes a token.

mod condition;
mod net;

use std::collections::BTreeMap;

pub use condition::{build_condition, ConditionBundle};
pub use net::{backward, forward, forward_cached, ForwardCache};

use crate::error::{Error, Result};
use crate::numerics::{Array, Rng};
use crate::samplers::Denoiser;
use crate::world::NUM_ID_ENCODERS;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    /// Length of `z_t` (and of the masked background).
    pub data_dim: usize,
    pub tokens: usize,
    pub width: usize,
    pub attn_dim: usize,
    pub cond_width: usize,
    pub adapter_hidden: usize,
    pub blocks: usize,
    /// Size of the sinusoidal time features (even).
    pub time_dim: usize,
    pub id_embed_dim: usize,
    pub exp_embed_dim: usize,
    /// Share one adapter between all identity embeddings.
    pub tie_id_adapters: bool,
}

impl DenoiserConfig {
    pub fn for_dims(data_dim: usize, id_embed_dim: usize, exp_embed_dim: usize) -> Self {
        Self {
            data_dim,
            tokens: 8,
            width: 16,
            attn_dim: 16,
            cond_width: 16,
            adapter_hidden: 32,
            blocks: 2,
            time_dim: 16,
            id_embed_dim,
            exp_embed_dim,
            tie_id_adapters: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.time_dim.is_multiple_of(2) || self.time_dim == 0 {
            return Err(Error::Config("time_dim must be a positive even number".into()));
        }
        if [self.data_dim, self.tokens, self.width, self.attn_dim, self.cond_width, self.adapter_hidden]
            .contains(&0)
        {
            return Err(Error::Config("denoiser dimensions must be nonzero".into()));
        }
        Ok(())
    }

    /// Adapter name used by identity embedding `i`.
    pub fn id_adapter(&self, i: usize) -> String {
        if self.tie_id_adapters {
            "adapt.id0".to_string()
        } else {
            format!("adapt.id{i}")
        }
    }

    /// Every parameter name with its shape. Matrices are stored `in × out`.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let hidden = self.tokens * self.width;
        let mut out = vec![
            ("time.w".to_string(), vec![self.time_dim, self.width]),
            ("time.b".to_string(), vec![self.width]),
            ("in.w".to_string(), vec![2 * self.data_dim, hidden]),
            ("in.b".to_string(), vec![hidden]),
        ];
        for l in 0..self.blocks {
            out.push((format!("blk{l}.mlp.w"), vec![self.width, self.width]));
            out.push((format!("blk{l}.mlp.b"), vec![self.width]));
            out.push((format!("blk{l}.attn.q"), vec![self.width, self.attn_dim]));
            out.push((format!("blk{l}.attn.k"), vec![self.cond_width, self.attn_dim]));
            out.push((format!("blk{l}.attn.v"), vec![self.cond_width, self.attn_dim]));
            out.push((format!("blk{l}.attn.o"), vec![self.attn_dim, self.width]));
        }
        let id_adapters = if self.tie_id_adapters { 1 } else { NUM_ID_ENCODERS };
        let mut adapters: Vec<(String, usize)> =
            (0..id_adapters).map(|i| (format!("adapt.id{i}"), self.id_embed_dim)).collect();
        adapters.push(("adapt.exp".to_string(), self.exp_embed_dim));
        for (name, raw) in adapters {
            out.push((format!("{name}.w1"), vec![raw, self.adapter_hidden]));
            out.push((format!("{name}.b1"), vec![self.adapter_hidden]));
            out.push((format!("{name}.w2"), vec![self.adapter_hidden, self.cond_width]));
            out.push((format!("{name}.b2"), vec![self.cond_width]));
        }
        out.push(("out.w".to_string(), vec![hidden, self.data_dim]));
        out.push(("out.b".to_string(), vec![self.data_dim]));
        out
    }
}

/// Named parameter arrays plus the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub config: DenoiserConfig,
    pub tensors: BTreeMap<String, Array>,
}

impl DenoiserParams {
    /// Uniform `±1/√fan_in` weights, zero biases, zero output projection.
    pub fn init(config: DenoiserConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut tensors = BTreeMap::new();
        for (name, shape) in config.param_shapes() {
            let is_bias = name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2");
            let arr = if is_bias || name.starts_with("out.") {
                Array::zeros(&shape)
            } else {
                let bound = 1.0 / (shape[0] as f64).sqrt();
                let n = shape.iter().product();
                let data = (0..n).map(|_| bound * (2.0 * rng.uniform() - 1.0)).collect();
                Array::from_vec(&shape, data)?
            };
            tensors.insert(name, arr);
        }
        Ok(Self { config, tensors })
    }

    /// Like [`init`](Self::init) but with a random output projection as well,
    /// so that every parameter influences the output.
    pub fn init_dense(config: DenoiserConfig, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::init(config, rng)?;
        for name in ["out.w", "out.b"] {
            let t = p.tensors.get_mut(name).expect("present");
            let bound = 1.0 / (t.shape()[0] as f64).sqrt();
            for v in t.as_mut_slice() {
                *v = bound * (2.0 * rng.uniform() - 1.0);
            }
        }
        Ok(p)
    }

    pub fn get(&self, name: &str) -> &[f64] {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
            .as_slice()
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Array::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Array::is_finite)
    }

    pub fn zeros_like(&self) -> BTreeMap<String, Array> {
        self.tensors
            .iter()
            .map(|(k, v)| (k.clone(), Array::zeros_like(v)))
            .collect()
    }

    /// Check a parameter map against the configured names and shapes.
    pub fn from_tensors(config: DenoiserConfig, tensors: BTreeMap<String, Array>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != tensors.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter arrays, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (name, shape) in shapes {
            let t = tensors
                .get(&name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    expected: shape,
                    got: t.shape().to_vec(),
                });
            }
        }
        Ok(Self { config, tensors })
    }
}

impl Denoiser for DenoiserParams {
    fn predict(&self, zt: &Array, t: usize, cond: &ConditionBundle) -> Result<Array> {
        forward(self, zt, t, cond)
    }
}

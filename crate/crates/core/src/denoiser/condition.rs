use crate::error::{Error, Result};
use crate::numerics::Array;
use crate::world::{mask_background, FactorSample, OracleEncoders};

/// Conditioning triple: masked background, compound identity embeddings and
/// the expression embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBundle {
    pub masked_bkg: Array,
    pub id_embeds: Vec<Array>,
    pub exp_embed: Array,
}

impl ConditionBundle {
    /// Bundle with zero background and no embeddings; analytic denoisers
    /// ignore their conditions.
    pub fn unconditioned(dim: usize) -> Self {
        Self {
            masked_bkg: Array::zeros(&[dim]),
            id_embeds: Vec::new(),
            exp_embed: Array::zeros(&[0]),
        }
    }

    /// Keep only the first `n` identity embeddings.
    pub fn with_id_embeds(mut self, n: usize) -> Self {
        self.id_embeds.truncate(n);
        self
    }
}

/// Condition for generating `bkg` with the identity of `id_src` and the
/// expression of `exp_src`. Passing the same sample three times gives the
/// reconstruction condition.
pub fn build_condition(
    bkg: &FactorSample,
    id_src: &FactorSample,
    exp_src: &FactorSample,
    enc: &OracleEncoders,
) -> Result<ConditionBundle> {
    if bkg.x0.shape() != id_src.x0.shape() || bkg.x0.shape() != exp_src.x0.shape() {
        return Err(Error::ShapeMismatch {
            expected: bkg.x0.shape().to_vec(),
            got: id_src.x0.shape().to_vec(),
        });
    }
    Ok(ConditionBundle {
        masked_bkg: mask_background(&bkg.x0, &bkg.mask)?,
        id_embeds: enc.identity_embeddings(&id_src.x0)?,
        exp_embed: enc.expression(&exp_src.x0)?,
    })
}

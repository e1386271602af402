use super::attention::{multi_head_attention, MhaParams};
use super::tensor::{flatten_tokens, max_pool_2x2, unflatten_tokens, upsample_bilinear, Conv2d, FeatureMap};
use crate::error::{Error, Result};

/// Convolutions feeding the attention block plus the block itself.
#[derive(Debug, Clone, PartialEq)]
pub struct EglaParams {
    /// Applied to the pooled intermediate map S.
    pub conv_q: Conv2d,
    /// Applied to the global feature J.
    pub conv_k: Conv2d,
    pub conv_v: Conv2d,
    pub mha: MhaParams,
}

/// Global-local attention: queries from max-pooled, convolved S; keys and
/// values from two convolutions of J; the attended map is upsampled to S's
/// grid and added to S.
pub fn egla_forward(j: &FeatureMap, s: &FeatureMap, params: &EglaParams) -> Result<FeatureMap> {
    if s.b != j.b || s.h != 2 * j.h || s.w != 2 * j.w {
        return Err(Error::invalid(format!(
            "S must be J's batch with twice its spatial size: J {:?}, S {:?}",
            j.shape(),
            s.shape()
        )));
    }
    if params.mha.width() != s.c {
        return Err(Error::DimensionMismatch {
            context: "attention width vs S channels (residual)",
            expected: s.c,
            got: params.mha.width(),
        });
    }
    let q = flatten_tokens(&params.conv_q.apply(&max_pool_2x2(s)?)?);
    let k = flatten_tokens(&params.conv_k.apply(j)?);
    let v = flatten_tokens(&params.conv_v.apply(j)?);
    let attended = multi_head_attention(&q, &k, &v, &params.mha)?;
    let up = upsample_bilinear(&unflatten_tokens(&attended, j.h, j.w)?, s.h, s.w);
    let mut out = s.clone();
    out.data.iter_mut().zip(&up.data).for_each(|(o, u)| *o += u);
    Ok(out)
}

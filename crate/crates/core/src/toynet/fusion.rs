use super::tensor::{Conv2d, FeatureMap};
use crate::error::{Error, Result};

/// Appends one constant channel per batch item holding that item's class
/// confidence.
pub fn concat_confidence(f: &FeatureMap, confidence: &[f64]) -> Result<FeatureMap> {
    if confidence.len() != f.b {
        return Err(Error::DimensionMismatch {
            context: "confidence per batch item",
            expected: f.b,
            got: confidence.len(),
        });
    }
    if let Some(c) = confidence.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::invalid(format!("confidence {c} outside [0, 1]")));
    }
    let plane = f.h * f.w;
    let mut data = Vec::with_capacity(f.b * (f.c + 1) * plane);
    for (b, c) in confidence.iter().enumerate() {
        data.extend_from_slice(&f.data[b * f.c * plane..(b + 1) * f.c * plane]);
        data.extend(std::iter::repeat_n(*c, plane));
    }
    FeatureMap::new(f.b, f.c + 1, f.h, f.w, data)
}

/// Decoder outputs to be fused, with the global and intermediate features
/// that fed the attention stage.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderBundle {
    pub outputs: Vec<FeatureMap>,
    /// 1×1 mixing kernel.
    pub fusion: Conv2d,
    pub global_feature: FeatureMap,
    pub intermediate: FeatureMap,
}

impl DecoderBundle {
    pub fn validate(&self) -> Result<()> {
        let (j, s) = (&self.global_feature, &self.intermediate);
        if s.h != 2 * j.h || s.w != 2 * j.w {
            return Err(Error::invalid(format!(
                "intermediate map must be twice the global feature's size: J {:?}, S {:?}",
                j.shape(),
                s.shape()
            )));
        }
        Ok(())
    }
}

/// Element-wise mean of the outputs followed by a 1×1 convolution.
pub fn fuse(outputs: &[FeatureMap], kernel: &Conv2d) -> Result<FeatureMap> {
    if outputs.len() < 2 {
        return Err(Error::invalid(format!("fusion needs at least two outputs, got {}", outputs.len())));
    }
    if kernel.k != 1 {
        return Err(Error::invalid("fusion kernel must be 1x1"));
    }
    let shape = outputs[0].shape();
    if let Some(o) = outputs.iter().find(|o| o.shape() != shape) {
        return Err(Error::invalid(format!("decoder output shapes differ: {shape:?} vs {:?}", o.shape())));
    }
    let m = outputs.len() as f64;
    let mut mean = outputs[0].clone();
    for (i, v) in mean.data.iter_mut().enumerate() {
        *v = outputs.iter().map(|o| o.data[i]).sum::<f64>() / m;
    }
    kernel.apply(&mean)
}

pub fn fuse_outputs(bundle: &DecoderBundle) -> Result<FeatureMap> {
    bundle.validate()?;
    fuse(&bundle.outputs, &bundle.fusion)
}

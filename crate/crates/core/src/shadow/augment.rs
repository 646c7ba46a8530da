//! Neural masking: cheap extra shadow models made by randomly zeroing
//! weights of a trained base model.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::model::ShadowModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::LinearLayer;
use crate::rng::RandomSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskScope {
    /// The head layers.
    Fc,
    /// The expert-shaped middle blocks, which hold most of the weights.
    ConvAnalog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub scope: MaskScope,
    pub p: f64,
    pub seed: u64,
}

/// Largest allowed drop in test accuracy, in absolute terms.
pub const MAX_ACCURACY_DROP: f64 = 0.10;

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Input(format!("mask probability {} outside [0,1]", self.p)));
        }
        Ok(())
    }
}

fn mask_layer(layer: &mut LinearLayer, p: f64, rng: &mut crate::rng::Rng) -> usize {
    let mut zeroed = 0;
    for w in layer.weight.values_mut() {
        if rng.random_bool(p) {
            *w = 0.0;
            zeroed += 1;
        }
    }
    zeroed
}

/// Copy of `base` with each in-scope weight independently zeroed with
/// probability `spec.p`. Biases and out-of-scope layers are left alone.
pub fn augment_model(base: &ShadowModel, spec: &MaskSpec) -> Result<ShadowModel> {
    spec.validate()?;
    let mut out = base.clone();
    let mut rng = RandomSource::new(spec.seed).stream("mask");
    let layers: Vec<&mut LinearLayer> = match spec.scope {
        MaskScope::Fc => out.net.head.iter_mut().collect(),
        MaskScope::ConvAnalog => out.net.blocks.iter_mut().flatten().collect(),
    };
    for layer in layers {
        mask_layer(layer, spec.p, &mut rng);
    }
    Ok(out)
}

/// Number of weights a mask with this scope may touch.
pub fn scope_size(model: &ShadowModel, scope: MaskScope) -> usize {
    let count = |ls: &[LinearLayer]| ls.iter().map(|l| l.weight.values().len()).sum::<usize>();
    match scope {
        MaskScope::Fc => count(&model.net.head),
        MaskScope::ConvAnalog => model.net.blocks.iter().map(|b| count(b)).sum(),
    }
}

/// [`augment_model`] that rejects masks costing more than
/// [`MAX_ACCURACY_DROP`] test accuracy relative to the base.
pub fn augment_checked(base: &ShadowModel, spec: &MaskSpec, test: &Dataset) -> Result<ShadowModel> {
    let out = augment_model(base, spec)?;
    let before = base.net.accuracy(&test.features, &test.labels)?;
    let after = out.net.accuracy(&test.features, &test.labels)?;
    if before - after > MAX_ACCURACY_DROP {
        return Err(Error::Input(format!(
            "mask {:?} p={} drops test accuracy from {before:.3} to {after:.3}",
            spec.scope, spec.p
        )));
    }
    Ok(out)
}

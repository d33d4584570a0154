use serde::{Deserialize, Serialize};

use crate::alignment::DEFAULT_BG_THRESHOLD;
use crate::error::{CtaError, Result};
use crate::numerics::{DenseVector, SeededRng};
use crate::simulator::{DomainTransform, SourceModel};
use crate::{Roi, Vector};

pub const MAX_OBJECTS_PER_SCENE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            min_objects: 4,
            max_objects: 12,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_objects < 1
            || self.max_objects > MAX_OBJECTS_PER_SCENE
            || self.min_objects > self.max_objects
        {
            return Err(CtaError::InvalidArgument(format!(
                "object range [{}, {}] must lie within [1, {MAX_OBJECTS_PER_SCENE}]",
                self.min_objects, self.max_objects
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub feature: Vector,
    pub true_class: usize,
}

/// One simulated image: a global feature and its object features.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image_feature: Vector,
    pub objects: Vec<SceneObject>,
}

/// Draws a scene under `transform`.
///
/// Objects pick a class by the source model's class frequencies and a clean
/// feature from that class's Gaussian, then pass through the transform. The
/// image feature is the transformed mean of the clean object features with
/// its own noise draw.
pub fn sample_scene(
    source: &SourceModel,
    transform: &DomainTransform,
    rng: &mut SeededRng,
    cfg: &SceneConfig,
) -> Result<Scene> {
    cfg.validate()?;
    if transform.dim() != source.dim() {
        return Err(CtaError::Shape(format!(
            "transform width {} vs source width {}",
            transform.dim(),
            source.dim()
        )));
    }
    let n = cfg.min_objects + rng.below(cfg.max_objects - cfg.min_objects + 1);
    let mut clean = Vec::with_capacity(n);
    let mut objects = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.categorical(source.class_freqs());
        let f = source.sample_clean(class, rng);
        objects.push(SceneObject {
            feature: transform.apply(&f, rng)?,
            true_class: class,
        });
        clean.push(f);
    }
    let clean_mean = DenseVector::mean_of(&clean)?;
    Ok(Scene {
        image_feature: transform.apply(&clean_mean, rng)?,
        objects,
    })
}

/// Fraction of objects kept as foreground (`p_bg < 0.5`) and assigned to
/// their true class. Empty input scores 0.
pub fn evaluate_accuracy(predictions: &[(Roi, usize)]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .filter(|(roi, truth)| roi.p_bg() < DEFAULT_BG_THRESHOLD && roi.fg_argmax() == *truth)
        .count();
    hits as f64 / predictions.len() as f64
}

use serde::{Deserialize, Serialize};

use crate::alignment::RoiPrediction;
use crate::error::{CtaError, Result};
use crate::numerics::{DenseVector, SeededRng};
use crate::{Roi, Vector};

/// Fraction of clean objects that must clear the background threshold once
/// `bg_bias` is calibrated.
pub const CLEAN_RECALL_TARGET: f64 = 0.99;

const MAX_PROTOTYPE_DRAWS: usize = 2_000;
const CALIBRATION_OBJECTS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    pub classes: usize,
    pub dim: usize,
    /// Within-class variance σ²_cls.
    pub class_var: f64,
    /// Minimum pairwise prototype distance in units of σ_cls.
    pub separation: f64,
    /// Common activation level shared by every prototype coordinate.
    pub offset: f64,
    pub temperature: f64,
    /// Relative class frequencies; empty means uniform.
    pub class_freqs: Vec<f64>,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            classes: 8,
            dim: 64,
            class_var: 1.0,
            separation: 6.0,
            offset: 12.0,
            temperature: 8.0,
            class_freqs: Vec::new(),
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dim < 2 {
            return Err(CtaError::InvalidArgument(format!(
                "need C >= 2 and d >= 2, got C={} d={}",
                self.classes, self.dim
            )));
        }
        if !(self.class_var > 0.0) || !(self.temperature > 0.0) || !(self.separation >= 0.0) {
            return Err(CtaError::InvalidArgument(
                "class_var and temperature must be positive, separation non-negative".into(),
            ));
        }
        if !self.class_freqs.is_empty()
            && (self.class_freqs.len() != self.classes
                || self.class_freqs.iter().any(|&f| !(f >= 0.0))
                || self.class_freqs.iter().sum::<f64>() <= 0.0)
        {
            return Err(CtaError::InvalidArgument(
                "class_freqs must list one non-negative weight per class".into(),
            ));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        if self.class_freqs.is_empty() {
            vec![1.0; self.classes]
        } else {
            self.class_freqs.clone()
        }
    }
}

/// Stand-in for a trained detector: class prototypes in feature space plus a
/// dot-product classification head with a background logit.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    prototypes: Vec<Vector>,
    class_var: f64,
    head_temperature: f64,
    bg_bias: f64,
    class_freqs: Vec<f64>,
}

impl SourceModel {
    pub fn from_parts(
        prototypes: Vec<Vector>,
        class_var: f64,
        head_temperature: f64,
        bg_bias: f64,
        class_freqs: Vec<f64>,
    ) -> Result<Self> {
        if prototypes.len() < 2 || class_freqs.len() != prototypes.len() {
            return Err(CtaError::InvalidArgument(
                "need >= 2 prototypes with frequencies".into(),
            ));
        }
        let d = prototypes[0].len();
        if prototypes.iter().any(|p| p.len() != d) {
            return Err(CtaError::Shape("prototypes differ in length".into()));
        }
        Ok(Self {
            prototypes,
            class_var,
            head_temperature,
            bg_bias,
            class_freqs,
        })
    }

    pub fn prototypes(&self) -> &[Vector] {
        &self.prototypes
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn dim(&self) -> usize {
        self.prototypes[0].len()
    }

    pub fn class_var(&self) -> f64 {
        self.class_var
    }

    pub fn head_temperature(&self) -> f64 {
        self.head_temperature
    }

    pub fn bg_bias(&self) -> f64 {
        self.bg_bias
    }

    pub fn class_freqs(&self) -> &[f64] {
        &self.class_freqs
    }

    /// Clean feature of class `k`: `prototype_k + N(0, σ²_cls I)`.
    pub fn sample_clean(&self, class: usize, rng: &mut SeededRng) -> Vector {
        let std = self.class_var.sqrt();
        let values = self.prototypes[class]
            .iter()
            .map(|&m| m + std * rng.normal())
            .collect();
        DenseVector::from_vec_unchecked(values)
    }

    fn logits(&self, feature: &Vector) -> Result<Vec<f64>> {
        let mut logits = Vec::with_capacity(self.num_classes() + 1);
        for p in &self.prototypes {
            logits.push(feature.dot(p)? / self.head_temperature);
        }
        logits.push(self.bg_bias);
        Ok(logits)
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Softmax head over `C` foreground logits `f·p_k / T` and the background
/// logit `bg_bias`.
pub fn head_predict(feature: &Vector, source: &SourceModel) -> Result<Roi> {
    let logits = source.logits(feature)?;
    let lse = log_sum_exp(&logits);
    let mut probs: Vec<f64> = logits.iter().map(|&l| (l - lse).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    RoiPrediction::new(feature.clone(), DenseVector::new(probs)?)
}

/// Draws prototypes `offset·1 + u_k`, `u_k ⟂ 1` of equal norm, with pairwise distances of at least
/// `separation·σ_cls` (rejection sampling), then calibrates the background
/// bias on clean objects.
pub fn generate_source_model(rng: &mut SeededRng, cfg: &SourceConfig) -> Result<SourceModel> {
    cfg.validate()?;
    let min_dist = cfg.separation * cfg.class_var.sqrt();
    // Spread the centred parts so random pairs land just past the minimum.
    let radius = 1.1 * min_dist / std::f64::consts::SQRT_2;
    let mut draw_rng = rng.fork(0x70);
    let mut accepted = None;
    for _ in 0..MAX_PROTOTYPE_DRAWS {
        let protos: Vec<Vec<f64>> = (0..cfg.classes)
            .map(|_| {
                let mut raw: Vec<f64> = (0..cfg.dim).map(|_| draw_rng.normal()).collect();
                // Keep the class-specific part orthogonal to the shared offset so
                // every prototype has the same norm and the dot-product head
                // ranks classes by distance.
                let mean = raw.iter().sum::<f64>() / cfg.dim as f64;
                raw.iter_mut().for_each(|x| *x -= mean);
                let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                raw.iter().map(|x| cfg.offset + radius * x / norm).collect()
            })
            .collect();
        let ok = (0..cfg.classes).all(|i| {
            (i + 1..cfg.classes).all(|j| {
                let d2: f64 = protos[i]
                    .iter()
                    .zip(&protos[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2.sqrt() >= min_dist
            })
        });
        if ok {
            accepted = Some(protos);
            break;
        }
    }
    let protos = accepted.ok_or_else(|| {
        CtaError::Infeasible(format!(
            "could not place {} prototypes {} apart in dimension {} after {} draws",
            cfg.classes, min_dist, cfg.dim, MAX_PROTOTYPE_DRAWS
        ))
    })?;
    let prototypes = protos
        .into_iter()
        .map(DenseVector::new)
        .collect::<Result<Vec<_>>>()?;
    let mut model = SourceModel::from_parts(
        prototypes,
        cfg.class_var,
        cfg.temperature,
        0.0,
        cfg.frequencies(),
    )?;
    model.bg_bias = calibrate_bg_bias(&model, &mut rng.fork(0xb9))?;
    Ok(model)
}

/// Largest background bias that keeps `p_bg < 0.5` for at least
/// [`CLEAN_RECALL_TARGET`] of clean objects.
///
/// `p_bg < 0.5` holds exactly when the bias is below the log-sum-exp of the
/// foreground logits, so the answer is a quantile of that quantity.
fn calibrate_bg_bias(model: &SourceModel, rng: &mut SeededRng) -> Result<f64> {
    let mut thresholds = Vec::with_capacity(CALIBRATION_OBJECTS);
    for _ in 0..CALIBRATION_OBJECTS {
        let class = rng.categorical(model.class_freqs());
        let f = model.sample_clean(class, rng);
        let mut logits = model.logits(&f)?;
        logits.pop();
        thresholds.push(log_sum_exp(&logits));
    }
    thresholds.sort_by(f64::total_cmp);
    let idx = ((1.0 - CLEAN_RECALL_TARGET) * CALIBRATION_OBJECTS as f64).floor() as usize;
    let q = thresholds[idx];
    Ok(q - 1e-9 * q.abs().max(1.0))
}

//! Built-in continual-shift scenarios.
//!
//! Each segment is a [`Corruption`]: a few named knobs turned into a
//! [`DomainTransform`] relative to the source model's geometry. Shifts are in
//! units of σ_cls per coordinate, so the same table works for any width.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CtaError, Result};
use crate::numerics::{DenseMatrix, DenseVector, SeededRng};
use crate::simulator::{
    planar_rotation, DomainSchedule, DomainTransform, ScheduleMode, Segment, SourceModel,
};
use crate::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "coco-c-like")]
    CocoCLike,
    #[serde(rename = "shift-discrete-like")]
    ShiftDiscreteLike,
    #[serde(rename = "shift-continuous-like")]
    ShiftContinuousLike,
}

impl Preset {
    pub const ALL: [Preset; 3] = [
        Preset::CocoCLike,
        Preset::ShiftDiscreteLike,
        Preset::ShiftContinuousLike,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::CocoCLike => "coco-c-like",
            Preset::ShiftDiscreteLike => "shift-discrete-like",
            Preset::ShiftContinuousLike => "shift-continuous-like",
        }
    }

    pub fn default_segment_steps(self) -> usize {
        match self {
            Preset::CocoCLike => 500,
            Preset::ShiftDiscreteLike => 1000,
            Preset::ShiftContinuousLike => 1000,
        }
    }

    pub fn mode(self) -> ScheduleMode {
        match self {
            Preset::ShiftContinuousLike => ScheduleMode::Continuous,
            _ => ScheduleMode::Discrete,
        }
    }

    /// Segment table. Every preset ends on the untouched source domain.
    pub fn corruptions(self) -> Vec<Corruption> {
        let c = Corruption::named;
        match self {
            Preset::CocoCLike => vec![
                c("gaussian_noise").noise(0.5).dim(0.25),
                c("shot_noise").noise(0.5).dim(0.2).drift(0.2),
                c("impulse_noise").noise(0.6).dim(0.3),
                c("defocus_blur").scale(0.97).drift(0.4),
                c("glass_blur").scale(0.975).drift(0.6),
                c("motion_blur").drift(0.8),
                c("zoom_blur").scale(0.96).drift(0.5),
                c("snow").dim(0.35).drift(0.6),
                c("frost").dim(0.3).drift(0.7).noise(0.3),
                c("fog").scale(0.97).dim(0.2),
                c("brightness").dim(-0.2).drift(0.3),
                c("contrast").scale(0.96),
                c("elastic_transform").tilt(0.3).drift(0.4),
                c("pixelate").drift(0.7).noise(0.2),
                c("jpeg_compression").noise(0.4).drift(0.5),
                c("original"),
            ],
            Preset::ShiftDiscreteLike => vec![
                c("cloudy").dim(0.2).drift(0.4),
                c("overcast").dim(0.3).drift(0.5),
                c("foggy").scale(0.97).dim(0.25),
                c("rainy").drift(0.7).noise(0.3),
                c("dawn_dusk").dim(0.35).drift(0.3),
                c("night").dim(0.4).drift(0.6).noise(0.2),
                c("clear"),
            ],
            Preset::ShiftContinuousLike => vec![
                c("clear"),
                c("foggy").scale(0.97).dim(0.3).drift(0.3),
                c("clear"),
            ],
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = CtaError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| CtaError::Config(format!("unknown scenario preset `{s}`")))
    }
}

/// A desk-scale corruption, expressed relative to the source geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Corruption {
    pub label: String,
    /// Shift against the mean activation direction (feature dimming), per
    /// coordinate in σ_cls units. Negative values brighten.
    pub dim: f64,
    /// Shift along a seeded random direction, RMS per coordinate in σ_cls
    /// units.
    pub drift: f64,
    pub scale: f64,
    pub noise: f64,
    /// Angle of a seeded planar rotation.
    pub tilt: f64,
    /// Segment length override; `0` uses the scenario default.
    pub duration: usize,
}

impl Default for Corruption {
    fn default() -> Self {
        Self {
            label: String::new(),
            dim: 0.0,
            drift: 0.0,
            scale: 1.0,
            noise: 0.0,
            tilt: 0.0,
            duration: 0,
        }
    }
}

impl Corruption {
    pub fn named(label: &str) -> Self {
        Self {
            label: label.to_string(),
            ..Default::default()
        }
    }

    pub fn dim(mut self, v: f64) -> Self {
        self.dim = v;
        self
    }

    pub fn drift(mut self, v: f64) -> Self {
        self.drift = v;
        self
    }

    pub fn scale(mut self, v: f64) -> Self {
        self.scale = v;
        self
    }

    pub fn noise(mut self, v: f64) -> Self {
        self.noise = v;
        self
    }

    pub fn tilt(mut self, v: f64) -> Self {
        self.tilt = v;
        self
    }

    /// Multiplies every knob's distance from "no corruption" by `severity`.
    pub fn with_severity(&self, severity: f64) -> Self {
        Self {
            label: self.label.clone(),
            dim: self.dim * severity,
            drift: self.drift * severity,
            scale: 1.0 + (self.scale - 1.0) * severity,
            noise: self.noise * severity,
            tilt: self.tilt * severity,
            duration: self.duration,
        }
    }

    pub fn to_transform(
        &self,
        source: &SourceModel,
        rng: &mut SeededRng,
    ) -> Result<DomainTransform> {
        let d = source.dim();
        let sigma = source.class_var().sqrt();
        let root_d = (d as f64).sqrt();
        let mean_dir = unit(&DenseVector::mean_of(source.prototypes())?)?;
        let drift_dir = {
            let raw = DenseVector::new((0..d).map(|_| rng.normal()).collect())?;
            unit(&raw)?
        };
        let shift = DenseVector::new(
            mean_dir
                .iter()
                .zip(drift_dir.iter())
                .map(|(&m, &r)| sigma * root_d * (-self.dim * m + self.drift * r))
                .collect(),
        )?;
        let rotation = if self.tilt != 0.0 {
            let i = rng.below(d);
            let j = (i + 1 + rng.below(d - 1)) % d;
            planar_rotation(d, i, j, self.tilt)?
        } else {
            DenseMatrix::identity(d)?
        };
        DomainTransform::new(shift, self.scale, rotation, self.noise * sigma)
    }
}

fn unit(v: &Vector) -> Result<Vector> {
    let n = v.norm();
    if n == 0.0 {
        return Err(CtaError::InvalidArgument("zero direction".into()));
    }
    v.scale(1.0 / n)
}

/// Turns a corruption list into a schedule. Every segment draws its random
/// directions from its own fork of `rng`, so editing one segment leaves the
/// others unchanged.
pub fn build_schedule(
    corruptions: &[Corruption],
    mode: ScheduleMode,
    source: &SourceModel,
    rng: &SeededRng,
    segment_steps: usize,
    severity: f64,
) -> Result<DomainSchedule> {
    let segments = corruptions
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let c = c.with_severity(severity);
            let duration = if c.duration > 0 {
                c.duration
            } else {
                segment_steps
            };
            Ok(Segment {
                label: c.label.clone(),
                transform: c.to_transform(source, &mut rng.fork(i as u64))?,
                duration,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DomainSchedule::new(mode, segments)
}

pub fn preset_schedule(
    preset: Preset,
    source: &SourceModel,
    rng: &SeededRng,
    segment_steps: Option<usize>,
    severity: f64,
) -> Result<DomainSchedule> {
    build_schedule(
        &preset.corruptions(),
        preset.mode(),
        source,
        rng,
        segment_steps.unwrap_or_else(|| preset.default_segment_steps()),
        severity,
    )
}

use serde::{Deserialize, Serialize};

use crate::error::{CtaError, Result};
use crate::numerics::{DenseMatrix, DenseVector, SeededRng};
use crate::{Matrix, Vector};

const ORTHOGONALITY_TOL: f64 = 1e-9;

/// `f = scale · R · f_clean + shift + ε`, `ε ~ N(0, noise_std² I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainTransform {
    shift: Vector,
    scale: f64,
    rotation: Matrix,
    noise_std: f64,
    rotation_is_identity: bool,
}

impl DomainTransform {
    pub fn new(shift: Vector, scale: f64, rotation: Matrix, noise_std: f64) -> Result<Self> {
        let d = shift.len();
        if rotation.shape() != (d, d) {
            return Err(CtaError::Shape(format!(
                "rotation {:?} for shift of length {d}",
                rotation.shape()
            )));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(CtaError::InvalidArgument(format!(
                "scale {scale} must be positive"
            )));
        }
        if !(noise_std >= 0.0) || !noise_std.is_finite() {
            return Err(CtaError::InvalidArgument(format!(
                "noise_std {noise_std} must be >= 0"
            )));
        }
        if orthogonality_error(&rotation) > ORTHOGONALITY_TOL {
            return Err(CtaError::InvalidArgument(
                "rotation is not orthogonal".into(),
            ));
        }
        let rotation_is_identity = rotation == DenseMatrix::identity(d)?;
        Ok(Self {
            shift,
            scale,
            rotation,
            noise_std,
            rotation_is_identity,
        })
    }

    pub fn identity(d: usize) -> Result<Self> {
        Self::new(Vector::zeros(d), 1.0, DenseMatrix::identity(d)?, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn shift(&self) -> &Vector {
        &self.shift
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &Matrix {
        &self.rotation
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn is_identity(&self) -> bool {
        self.rotation_is_identity
            && self.scale == 1.0
            && self.noise_std == 0.0
            && self.shift.iter().all(|&s| s == 0.0)
    }

    /// Deterministic part `scale · R · x + shift`.
    pub fn apply_mean(&self, x: &Vector) -> Result<Vector> {
        let rotated = if self.rotation_is_identity {
            x.clone()
        } else {
            self.rotation.matvec(x)?
        };
        let values = rotated
            .iter()
            .zip(self.shift.iter())
            .map(|(&r, &s)| self.scale * r + s)
            .collect();
        DenseVector::new(values)
    }

    /// Deterministic part plus fresh noise.
    pub fn apply(&self, x: &Vector, rng: &mut SeededRng) -> Result<Vector> {
        let mean = self.apply_mean(x)?;
        if self.noise_std == 0.0 {
            return Ok(mean);
        }
        mean.map(|m| m + self.noise_std * rng.normal())
    }

    /// Componentwise blend of shift, scale, and noise toward `to`; the
    /// rotation stays at `self`'s.
    pub fn lerp(&self, to: &Self, frac: f64) -> Result<Self> {
        if to.dim() != self.dim() {
            return Err(CtaError::Shape(
                "interpolating transforms of different widths".into(),
            ));
        }
        let mix = |a: f64, b: f64| a + (b - a) * frac;
        let shift = DenseVector::new(
            self.shift
                .iter()
                .zip(to.shift.iter())
                .map(|(&a, &b)| mix(a, b))
                .collect(),
        )?;
        Ok(Self {
            shift,
            scale: mix(self.scale, to.scale),
            rotation: self.rotation.clone(),
            noise_std: mix(self.noise_std, to.noise_std),
            rotation_is_identity: self.rotation_is_identity,
        })
    }
}

/// `max |RᵀR − I|`
pub fn orthogonality_error(r: &Matrix) -> f64 {
    let n = r.rows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = (0..n).map(|k| r.get(k, i) * r.get(k, j)).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    worst
}

/// Haar-ish random orthogonal matrix via Gram-Schmidt on Gaussian columns.
pub fn random_rotation(d: usize, rng: &mut SeededRng) -> Result<Matrix> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        // Two passes keep the basis orthogonal to round-off.
        for _ in 0..2 {
            for c in &cols {
                let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                for (vi, ci) in v.iter_mut().zip(c) {
                    *vi -= p * ci;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        cols.push(v.into_iter().map(|x| x / norm).collect());
    }
    DenseMatrix::from_fn(d, d, |i, j| cols[j][i])
}

/// Rotation by `angle` in the plane of coordinates `i` and `j`.
pub fn planar_rotation(d: usize, i: usize, j: usize, angle: f64) -> Result<Matrix> {
    if i >= d || j >= d || i == j {
        return Err(CtaError::InvalidArgument(format!(
            "plane ({i}, {j}) in dimension {d}"
        )));
    }
    let mut r = DenseMatrix::identity(d)?;
    let (s, c) = angle.sin_cos();
    r.set(i, i, c);
    r.set(j, j, c);
    r.set(i, j, -s);
    r.set(j, i, s);
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub label: String,
    pub transform: DomainTransform,
    pub duration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSchedule {
    mode: ScheduleMode,
    segments: Vec<Segment>,
}

impl DomainSchedule {
    pub fn new(mode: ScheduleMode, segments: Vec<Segment>) -> Result<Self> {
        let first = segments.first().ok_or_else(|| {
            CtaError::InvalidArgument("schedule needs at least one segment".into())
        })?;
        let d = first.transform.dim();
        if segments.iter().any(|s| s.duration == 0) {
            return Err(CtaError::InvalidArgument(
                "segment durations must be positive".into(),
            ));
        }
        if segments.iter().any(|s| s.transform.dim() != d) {
            return Err(CtaError::Shape("segments differ in width".into()));
        }
        Ok(Self { mode, segments })
    }

    pub fn mode(&self) -> ScheduleMode {
        self.mode
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_steps(&self) -> usize {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// First step of each segment.
    pub fn boundaries(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.segments.len());
        let mut start = 0;
        for s in &self.segments {
            out.push(start);
            start += s.duration;
        }
        out
    }

    /// `(segment index, offset within segment)`; steps past the end map to
    /// the final step of the last segment.
    pub fn locate(&self, t: usize) -> (usize, usize) {
        let mut start = 0;
        for (i, s) in self.segments.iter().enumerate() {
            if t < start + s.duration {
                return (i, t - start);
            }
            start += s.duration;
        }
        let last = self.segments.len() - 1;
        (last, self.segments[last].duration - 1)
    }

    pub fn transform_at(&self, t: usize) -> Result<DomainTransform> {
        let (i, offset) = self.locate(t);
        let seg = &self.segments[i];
        match self.mode {
            ScheduleMode::Discrete => Ok(seg.transform.clone()),
            ScheduleMode::Continuous => match self.segments.get(i + 1) {
                Some(next) if t < self.total_steps() => seg
                    .transform
                    .lerp(&next.transform, offset as f64 / seg.duration as f64),
                _ => Ok(self.segments.last().expect("non-empty").transform.clone()),
            },
        }
    }
}

/// Free-function form of [`DomainSchedule::transform_at`].
pub fn transform_at(schedule: &DomainSchedule, t: usize) -> Result<DomainTransform> {
    schedule.transform_at(t)
}

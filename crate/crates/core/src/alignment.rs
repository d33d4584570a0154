//! Image-level and class-wise object-level feature alignment losses.
//!
//! Both losses compare the EMA-tracked test mean against the precomputed
//! train Gaussian under the train covariance, so each reduces to half a
//! squared Mahalanobis distance. Object-level terms are weighted by
//! `ln(max_i N_i / N_k) + 0.01`, which favours rarely seen classes.

use std::collections::BTreeMap;

use crate::error::{CtaError, Result};
use crate::numerics::DenseVector;
use crate::scalar::Scalar;
use crate::stats::{kl_diag_parts, EmaMeanTracker, GaussianStats};

pub const DEFAULT_BG_THRESHOLD: f64 = 0.5;

/// Added to every class weight so the most frequent class still aligns.
pub const WEIGHT_OFFSET: f64 = 0.01;

/// A region feature with its head probabilities `[p_0 … p_{C−1}, p_bg]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiPrediction<T: Scalar> {
    feature: DenseVector<T>,
    probs: DenseVector<T>,
}

impl<T: Scalar> RoiPrediction<T> {
    pub fn new(feature: DenseVector<T>, probs: DenseVector<T>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(CtaError::Simplex(format!(
                "need at least one foreground class plus background, got {} probabilities",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|&&p| p < T::zero()) {
            return Err(CtaError::Simplex(format!("negative probability {p}")));
        }
        let sum: T = probs.iter().copied().sum();
        let tol = T::lit(1e-9).max(T::epsilon() * T::lit(4.0 * probs.len() as f64));
        if (sum - T::one()).abs() > tol {
            return Err(CtaError::Simplex(format!("probabilities sum to {sum}")));
        }
        Ok(Self { feature, probs })
    }

    pub fn feature(&self) -> &DenseVector<T> {
        &self.feature
    }

    pub fn probs(&self) -> &DenseVector<T> {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn p_bg(&self) -> T {
        self.probs[self.probs.len() - 1]
    }

    /// Most probable foreground class; ties go to the lowest index.
    pub fn fg_argmax(&self) -> usize {
        let fg = &self.probs.as_slice()[..self.num_classes()];
        let mut best = 0;
        for (k, &p) in fg.iter().enumerate().skip(1) {
            if p > fg[best] {
                best = k;
            }
        }
        best
    }
}

/// Indices of kept RoIs, grouped by assigned foreground class.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassAssignment {
    by_class: BTreeMap<usize, Vec<usize>>,
}

impl ClassAssignment {
    pub fn is_empty(&self) -> bool {
        self.by_class.is_empty()
    }

    pub fn total(&self) -> usize {
        self.by_class.values().map(Vec::len).sum()
    }

    pub fn indices(&self, class: usize) -> &[usize] {
        self.by_class.get(&class).map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.by_class.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    pub fn insert(&mut self, class: usize, index: usize) {
        self.by_class.entry(class).or_default().push(index);
    }

    /// Resolves indices against a feature list.
    pub fn gather<'a, T: Scalar>(
        &self,
        features: &'a [DenseVector<T>],
    ) -> Result<BTreeMap<usize, Vec<&'a DenseVector<T>>>> {
        self.by_class
            .iter()
            .map(|(&k, idx)| {
                let feats = idx
                    .iter()
                    .map(|&i| {
                        features.get(i).ok_or_else(|| {
                            CtaError::InvalidArgument(format!("assignment index {i} out of range"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((k, feats))
            })
            .collect()
    }
}

/// Keeps RoIs with `p_bg < bg_threshold` and assigns each to its most
/// probable foreground class.
pub fn assign_and_filter<T: Scalar>(
    rois: &[RoiPrediction<T>],
    bg_threshold: T,
) -> Result<ClassAssignment> {
    if !(bg_threshold > T::zero() && bg_threshold < T::one()) {
        return Err(CtaError::InvalidArgument(format!(
            "background threshold {bg_threshold} outside (0, 1)"
        )));
    }
    let mut out = ClassAssignment::default();
    for (i, roi) in rois.iter().enumerate() {
        if roi.p_bg() < bg_threshold {
            out.insert(roi.fg_argmax(), i);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassEntry<T: Scalar> {
    pub train: GaussianStats<T>,
    pub ema: EmaMeanTracker<T>,
    pub count: u64,
}

/// Per-class train statistics, EMA test means, and cumulative counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBank<T: Scalar> {
    entries: Vec<ClassEntry<T>>,
}

impl<T: Scalar> ClassBank<T> {
    /// EMA means start at the train means and counts at zero.
    pub fn new(train: Vec<GaussianStats<T>>, alpha: T) -> Result<Self> {
        if let Some(first) = train.first() {
            if train.iter().any(|s| s.dim() != first.dim()) {
                return Err(CtaError::Shape(
                    "class statistics differ in dimension".into(),
                ));
            }
        }
        let entries = train
            .into_iter()
            .map(|s| {
                Ok(ClassEntry {
                    ema: EmaMeanTracker::from_stats(&s, alpha)?,
                    train: s,
                    count: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }

    pub fn num_classes(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[ClassEntry<T>] {
        &self.entries
    }

    pub fn counts(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.count).collect()
    }

    /// Adds this step's features: counts grow by the number assigned and
    /// the EMA moves toward the per-class batch mean. Classes without
    /// features are left alone.
    pub fn update(&mut self, assigned: &BTreeMap<usize, Vec<&DenseVector<T>>>) -> Result<()> {
        for (&k, feats) in assigned {
            if feats.is_empty() {
                continue;
            }
            let entry = self
                .entries
                .get_mut(k)
                .ok_or_else(|| CtaError::InvalidArgument(format!("class {k} out of range")))?;
            let mean = DenseVector::mean_of(feats.iter().copied())?;
            entry.ema.update(&mean)?;
            entry.count += feats.len() as u64;
        }
        Ok(())
    }
}

/// Value-returning form of [`ClassBank::update`].
pub fn update_class_bank<T: Scalar>(
    mut bank: ClassBank<T>,
    assigned: &BTreeMap<usize, Vec<&DenseVector<T>>>,
) -> Result<ClassBank<T>> {
    bank.update(assigned)?;
    Ok(bank)
}

/// `w_k = ln(max_i N_i / N_k) + 0.01` over classes with `N_k > 0`; `None`
/// for unseen classes.
pub fn class_weights<T: Scalar>(bank: &ClassBank<T>) -> Vec<Option<T>> {
    weights_from_counts(&bank.counts())
}

pub fn weights_from_counts<T: Scalar>(counts: &[u64]) -> Vec<Option<T>> {
    let max = counts.iter().copied().max().unwrap_or(0);
    counts
        .iter()
        .map(|&n| (n > 0).then(|| T::lit((max as f64 / n as f64).ln() + WEIGHT_OFFSET)))
        .collect()
}

/// KL between the train Gaussian and the test Gaussian that shares its
/// covariance: `½ Σᵢ (μ_tr,i − μ_te,i)² / σ²_tr,i`.
pub fn image_loss<T: Scalar>(train: &GaussianStats<T>, test_mean: &EmaMeanTracker<T>) -> Result<T> {
    kl_diag_parts(train.mean(), train.var(), test_mean.mean(), train.var())
}

/// Weighted sum of per-class shared-covariance KL terms.
pub fn object_loss<T: Scalar>(bank: &ClassBank<T>) -> Result<T> {
    let weights = class_weights(bank);
    let mut total = T::zero();
    for (entry, w) in bank.entries.iter().zip(weights) {
        if let Some(w) = w {
            total = total + w * image_loss(&entry.train, &entry.ema)?;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentOutput<T: Scalar> {
    pub l_img: T,
    pub l_obj: T,
    pub l_total: T,
    /// `dL/df` for each image feature, in batch order.
    pub image_grads: Vec<DenseVector<T>>,
    /// `(RoI index, dL/df)` for every kept RoI.
    pub object_grads: Vec<(usize, DenseVector<T>)>,
}

/// `α/B · Σ⁻¹ (μ_te − μ_tr)`
fn mean_gradient<T: Scalar>(
    train: &GaussianStats<T>,
    ema: &EmaMeanTracker<T>,
    scale: T,
) -> Result<DenseVector<T>> {
    DenseVector::new(
        ema.mean()
            .iter()
            .zip(train.mean().iter())
            .zip(train.var().iter())
            .map(|((&te, &tr), &var)| scale * (te - tr) / var)
            .collect(),
    )
}

/// Total loss and per-feature gradients for one step.
///
/// The trackers in `bank` and `image_ema` must already include this step's
/// batch. Each feature enters its tracker through the `α · batch_mean` term;
/// the tracker's history is held constant.
pub fn total_loss_and_grads<T: Scalar>(
    train: &GaussianStats<T>,
    bank: &ClassBank<T>,
    image_ema: &EmaMeanTracker<T>,
    n_images: usize,
    assignment: &ClassAssignment,
    alpha: T,
) -> Result<AlignmentOutput<T>> {
    if n_images == 0 && assignment.is_empty() {
        return Err(CtaError::InvalidArgument("empty alignment batch".into()));
    }
    let l_img = image_loss(train, image_ema)?;
    let l_obj = object_loss(bank)?;

    let image_grads = if n_images > 0 {
        let g = mean_gradient(train, image_ema, alpha / T::lit(n_images as f64))?;
        vec![g; n_images]
    } else {
        Vec::new()
    };

    let weights = class_weights(bank);
    let mut object_grads = Vec::with_capacity(assignment.total());
    for (k, idx) in assignment.iter() {
        let entry = bank
            .entries
            .get(k)
            .ok_or_else(|| CtaError::InvalidArgument(format!("class {k} out of range")))?;
        let w = weights[k].ok_or_else(|| {
            CtaError::InvalidArgument(format!("class {k} assigned but has zero count"))
        })?;
        let g = mean_gradient(
            &entry.train,
            &entry.ema,
            w * alpha / T::lit(idx.len() as f64),
        )?;
        object_grads.extend(idx.iter().map(|&i| (i, g.clone())));
    }

    Ok(AlignmentOutput {
        l_img,
        l_obj,
        l_total: l_img + l_obj,
        image_grads,
        object_grads,
    })
}

//! Gaussian feature statistics: batch summaries, EMA mean tracking, diagonal
//! KL divergence, and the in-domain gap used to normalise the skip criterion.

use crate::error::{CtaError, Result};
use crate::numerics::{DenseVector, SeededRng};
use crate::scalar::Scalar;

/// Lower bound applied to every per-dimension variance.
pub const VAR_FLOOR: f64 = 1e-6;

/// Number of random half/half splits averaged by [`in_domain_gap`] unless the
/// caller asks otherwise.
pub const DEFAULT_GAP_PAIRS: usize = 10;

/// Diagonal-covariance Gaussian summary of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats<T: Scalar> {
    mean: DenseVector<T>,
    var: DenseVector<T>,
    count: u64,
}

impl<T: Scalar> GaussianStats<T> {
    /// Assembles statistics from parts. Variances below [`VAR_FLOOR`] are
    /// raised to it.
    pub fn new(mean: DenseVector<T>, var: DenseVector<T>, count: u64) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(CtaError::Shape(format!(
                "mean length {} vs variance length {}",
                mean.len(),
                var.len()
            )));
        }
        if count < 2 {
            return Err(CtaError::InsufficientSamples {
                needed: 2,
                got: count as usize,
            });
        }
        let floor = T::lit(VAR_FLOOR);
        let var = DenseVector::new(var.iter().map(|&v| v.max(floor)).collect())?;
        Ok(Self { mean, var, count })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DenseVector<T> {
        &self.mean
    }

    pub fn var(&self) -> &DenseVector<T> {
        &self.var
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

/// Mean and population variance (floored) of a feature list.
pub fn compute_stats<T: Scalar>(features: &[DenseVector<T>]) -> Result<GaussianStats<T>> {
    compute_stats_iter(features.iter())
}

pub(crate) fn compute_stats_iter<'a, T, I>(features: I) -> Result<GaussianStats<T>>
where
    T: Scalar,
    I: Iterator<Item = &'a DenseVector<T>> + Clone,
{
    let n = features.clone().count();
    if n < 2 {
        return Err(CtaError::InsufficientSamples { needed: 2, got: n });
    }
    let mean = DenseVector::mean_of(features.clone())?;
    let d = mean.len();
    let mut acc = vec![T::zero(); d];
    for f in features {
        for ((a, &x), &m) in acc.iter_mut().zip(f.iter()).zip(mean.iter()) {
            let dx = x - m;
            *a = *a + dx * dx;
        }
    }
    let inv = T::one() / T::lit(n as f64);
    let var = DenseVector::new(acc.into_iter().map(|a| a * inv).collect())?;
    GaussianStats::new(mean, var, n as u64)
}

/// Exponential moving average of a test-domain mean:
/// `mean ← (1 − α)·mean + α·batch_mean`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaMeanTracker<T: Scalar> {
    mean: DenseVector<T>,
    alpha: T,
}

impl<T: Scalar> EmaMeanTracker<T> {
    pub fn new(initial: DenseVector<T>, alpha: T) -> Result<Self> {
        if !(alpha > T::zero() && alpha <= T::one()) {
            return Err(CtaError::InvalidArgument(format!(
                "alpha {alpha} outside (0, 1]"
            )));
        }
        Ok(Self {
            mean: initial,
            alpha,
        })
    }

    /// Tracker starting at the train mean.
    pub fn from_stats(stats: &GaussianStats<T>, alpha: T) -> Result<Self> {
        Self::new(stats.mean().clone(), alpha)
    }

    pub fn mean(&self) -> &DenseVector<T> {
        &self.mean
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn update(&mut self, batch_mean: &DenseVector<T>) -> Result<()> {
        if batch_mean.len() != self.mean.len() {
            return Err(CtaError::Shape(format!(
                "EMA of length {} fed batch mean of length {}",
                self.mean.len(),
                batch_mean.len()
            )));
        }
        if !batch_mean.is_finite() {
            return Err(CtaError::NonFinite("EMA batch mean".into()));
        }
        let keep = T::one() - self.alpha;
        let next: Vec<T> = self
            .mean
            .iter()
            .zip(batch_mean.iter())
            .map(|(&m, &b)| keep * m + self.alpha * b)
            .collect();
        self.mean = DenseVector::new(next)?;
        Ok(())
    }
}

/// Value-returning form of [`EmaMeanTracker::update`].
pub fn ema_update<T: Scalar>(
    mut tracker: EmaMeanTracker<T>,
    batch_mean: &DenseVector<T>,
) -> Result<EmaMeanTracker<T>> {
    tracker.update(batch_mean)?;
    Ok(tracker)
}

/// `KL(N(μ_P, diag σ²_P) ‖ N(μ_Q, diag σ²_Q))`.
///
/// Evaluated per dimension as `½[(ρ − 1 − ln ρ) + Δμ²/σ²_Q]` with
/// `ρ = σ²_P/σ²_Q`, so equal variances give exactly `½ Δμ²/σ²`.
pub fn kl_diag_gaussian<T: Scalar>(p: &GaussianStats<T>, q: &GaussianStats<T>) -> Result<T> {
    kl_diag_parts(p.mean(), p.var(), q.mean(), q.var())
}

pub(crate) fn kl_diag_parts<T: Scalar>(
    mean_p: &DenseVector<T>,
    var_p: &DenseVector<T>,
    mean_q: &DenseVector<T>,
    var_q: &DenseVector<T>,
) -> Result<T> {
    let d = mean_p.len();
    if var_p.len() != d || mean_q.len() != d || var_q.len() != d {
        return Err(CtaError::Shape(format!(
            "KL between dimensions {} and {}",
            d,
            mean_q.len()
        )));
    }
    let half = T::lit(0.5);
    let mut total = T::zero();
    for i in 0..d {
        let vp = var_p[i];
        let vq = var_q[i];
        let rho = vp / vq;
        let spread = if rho == T::one() {
            T::zero()
        } else {
            ((rho - T::one()) - rho.ln()).max(T::zero())
        };
        let dm = mean_p[i] - mean_q[i];
        total = total + half * (spread + dm * dm / vq);
    }
    Ok(total)
}

/// In-domain distribution gap: the KL between statistics of two disjoint
/// random halves of `train_features`, averaged over `n_pairs` splits.
pub fn in_domain_gap<T: Scalar>(
    train_features: &[DenseVector<T>],
    rng: &mut SeededRng,
    n_pairs: usize,
) -> Result<T> {
    let n = train_features.len();
    if n < 4 {
        return Err(CtaError::InsufficientSamples { needed: 4, got: n });
    }
    if n_pairs == 0 {
        return Err(CtaError::InvalidArgument("n_pairs must be positive".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut total = T::zero();
    for _ in 0..n_pairs {
        rng.shuffle(&mut order);
        let (left, right) = order.split_at(n / 2);
        total = total + split_kl(train_features, left, right)?;
    }
    Ok(total / T::lit(n_pairs as f64))
}

/// KL between the statistics of two index subsets of `features`.
pub fn split_kl<T: Scalar>(
    features: &[DenseVector<T>],
    left: &[usize],
    right: &[usize],
) -> Result<T> {
    let pick = |idx: &[usize]| -> Result<GaussianStats<T>> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= features.len()) {
            return Err(CtaError::InvalidArgument(format!(
                "index {bad} out of range"
            )));
        }
        compute_stats_iter(idx.iter().map(|&i| &features[i]))
    };
    kl_diag_gaussian(&pick(left)?, &pick(right)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DenseVector<f64> {
        DenseVector::new(x.to_vec()).unwrap()
    }

    fn stats(mean: &[f64], var: &[f64]) -> GaussianStats<f64> {
        GaussianStats::new(v(mean), v(var), 2).unwrap()
    }

    #[test]
    fn two_point_stats() {
        let s = compute_stats(&[v(&[0.0, 0.0]), v(&[2.0, 2.0])]).unwrap();
        assert_eq!(s.mean().as_slice(), &[1.0, 1.0]);
        assert_eq!(s.var().as_slice(), &[1.0, 1.0]);
        assert_eq!(s.count(), 2);
    }

    #[test]
    fn constant_data_hits_floor() {
        let data = vec![v(&[3.0, -1.0]); 5];
        let s = compute_stats(&data).unwrap();
        assert_eq!(s.mean().as_slice(), &[3.0, -1.0]);
        assert_eq!(s.var().as_slice(), &[VAR_FLOOR, VAR_FLOOR]);
    }

    #[test]
    fn stats_errors() {
        assert!(matches!(
            compute_stats(&[v(&[1.0])]),
            Err(CtaError::InsufficientSamples { .. })
        ));
        assert!(matches!(
            compute_stats(&[v(&[1.0]), v(&[1.0, 2.0])]),
            Err(CtaError::Shape(_))
        ));
    }

    #[test]
    fn monte_carlo_stats() {
        let mut rng = SeededRng::new(2024);
        let data: Vec<_> = (0..10_000)
            .map(|_| v(&[3.0 + 2.0 * rng.normal(), 3.0 + 2.0 * rng.normal()]))
            .collect();
        let s = compute_stats(&data).unwrap();
        for i in 0..2 {
            assert!((s.mean()[i] - 3.0).abs() < 0.1);
            assert!((s.var()[i] - 4.0).abs() < 0.3);
        }
    }

    #[test]
    fn ema_examples() {
        let t = EmaMeanTracker::new(v(&[0.0, 0.0]), 0.01).unwrap();
        let t = ema_update(t, &v(&[1.0, 1.0])).unwrap();
        assert_eq!(t.mean().as_slice(), &[0.01, 0.01]);

        let t2 = ema_update(t.clone(), &t.mean().clone()).unwrap();
        assert_eq!(t2.mean(), t.mean());

        let t3 = EmaMeanTracker::new(v(&[5.0, -2.0]), 1.0).unwrap();
        let t3 = ema_update(t3, &v(&[0.25, 8.0])).unwrap();
        assert_eq!(t3.mean().as_slice(), &[0.25, 8.0]);
    }

    #[test]
    fn ema_errors() {
        assert!(EmaMeanTracker::new(v(&[0.0]), 0.0).is_err());
        assert!(EmaMeanTracker::new(v(&[0.0]), 1.5).is_err());
        let mut t = EmaMeanTracker::new(v(&[0.0]), 0.5).unwrap();
        assert!(t.update(&v(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn kl_examples() {
        let p = stats(&[0.3, -0.2], &[1.5, 0.7]);
        assert_eq!(kl_diag_gaussian(&p, &p).unwrap(), 0.0);

        let p = stats(&[0.0, 0.0], &[1.0, 1.0]);
        let q = stats(&[1.0, 0.0], &[1.0, 1.0]);
        assert_eq!(kl_diag_gaussian(&p, &q).unwrap(), 0.5);

        let p = stats(&[0.0], &[1.0]);
        let q = stats(&[0.0], &[2.0]);
        let expected = 0.5 * (2f64.ln() + 0.5 - 1.0);
        assert!((kl_diag_gaussian(&p, &q).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.09657).abs() < 1e-5);
    }

    #[test]
    fn kl_dimension_mismatch() {
        let p = stats(&[0.0], &[1.0]);
        let q = stats(&[0.0, 0.0], &[1.0, 1.0]);
        assert!(matches!(kl_diag_gaussian(&p, &q), Err(CtaError::Shape(_))));
    }

    #[test]
    fn gap_needs_four_samples() {
        let mut rng = SeededRng::new(0);
        let data = vec![v(&[1.0]); 3];
        assert!(in_domain_gap(&data, &mut rng, 10).is_err());
    }

    #[test]
    fn gap_of_duplicated_halves_is_zero() {
        // Two copies of the same list: splitting by copy gives identical stats.
        let mut rng = SeededRng::new(5);
        let base: Vec<_> = (0..20).map(|_| v(&[rng.normal(), rng.normal()])).collect();
        let doubled: Vec<_> = base.iter().chain(base.iter()).cloned().collect();
        let left: Vec<usize> = (0..20).collect();
        let right: Vec<usize> = (20..40).collect();
        assert_eq!(split_kl(&doubled, &left, &right).unwrap(), 0.0);
    }

    #[test]
    fn works_in_single_precision() {
        let p = GaussianStats::<f32>::new(
            DenseVector::new(vec![0.0]).unwrap(),
            DenseVector::new(vec![1.0]).unwrap(),
            2,
        )
        .unwrap();
        let q = GaussianStats::<f32>::new(
            DenseVector::new(vec![1.0]).unwrap(),
            DenseVector::new(vec![1.0]).unwrap(),
            2,
        )
        .unwrap();
        assert_eq!(kl_diag_gaussian(&p, &q).unwrap(), 0.5f32);
    }
}

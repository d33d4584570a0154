use crate::error::{CtaError, Result};
use crate::numerics::DenseVector;
use crate::scalar::Scalar;

/// Central-difference gradient of `f` at `theta`:
/// `(f(θ + h eᵢ) − f(θ − h eᵢ)) / 2h` per coordinate.
pub fn finite_diff_grad<T, F>(mut f: F, theta: &DenseVector<T>, h: T) -> Result<DenseVector<T>>
where
    T: Scalar,
    F: FnMut(&DenseVector<T>) -> Result<T>,
{
    if !(h > T::zero()) {
        return Err(CtaError::InvalidArgument(format!(
            "step size {h} must be positive"
        )));
    }
    let two_h = h + h;
    let mut probe = theta.clone().into_vec();
    let mut grad = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&DenseVector::new(probe.clone())?)?;
        probe[i] = orig - h;
        let minus = f(&DenseVector::new(probe.clone())?)?;
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(CtaError::NonFinite(format!("objective at coordinate {i}")));
        }
        grad.push((plus - minus) / two_h);
    }
    DenseVector::new(grad)
}

/// Largest relative discrepancy `|a−n| / max(|a|, |n|, floor)` over
/// coordinates. The floor keeps near-zero components from dominating.
pub fn max_relative_error<T: Scalar>(analytic: &[T], numeric: &[T], floor: T) -> T {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(T::zero(), T::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DenseVector<f64> {
        DenseVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn dot_self_gradient() {
        let g = finite_diff_grad(|t: &DenseVector<f64>| t.dot(t), &v(&[1.0, 2.0]), 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let g =
            finite_diff_grad(|_: &DenseVector<f64>| Ok(3.5), &v(&[0.3, -7.0, 1e3]), 1e-5).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn linear_function_gradient() {
        let g = finite_diff_grad(
            |t: &DenseVector<f64>| Ok(t.sum()),
            &v(&[0.0, 0.0, 0.0]),
            1e-5,
        )
        .unwrap();
        assert!(g.iter().all(|x| (x - 1.0).abs() < 1e-9));
    }

    #[test]
    fn non_finite_objective_is_rejected() {
        let r = finite_diff_grad(
            |t: &DenseVector<f64>| Ok(1.0 / (t[0] - 1e-5)),
            &v(&[0.0]),
            1e-5,
        );
        assert!(r.is_err());
    }

    #[test]
    fn rejects_nonpositive_step() {
        assert!(finite_diff_grad(|t: &DenseVector<f64>| Ok(t.sum()), &v(&[1.0]), 0.0).is_err());
    }
}

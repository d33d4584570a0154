//! Decides, step by step, whether the adaptor should take a gradient step.
//!
//! Two ratios are watched:
//! - `L_img / D_KL^in`: the current alignment gap against the gap between two
//!   halves of the source data. Fires above `tau1`.
//! - `L_img / L_ema`: the gap against its own slow average, taken before this
//!   step's value is folded in. Fires above `tau2`; catches sudden jumps.
//!
//! An update happens when either fires. `+∞` disables a criterion and `−∞`
//! makes it fire on every step.

use crate::error::{CtaError, Result};
use crate::scalar::Scalar;

pub const DEFAULT_TAU1: f64 = 1.1;
pub const DEFAULT_TAU2: f64 = 1.05;

const LOSS_EMA_KEEP: f64 = 0.99;
const LOSS_EMA_RATE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct SkipState<T: Scalar> {
    d_kl_in: T,
    l_ema: Option<T>,
    tau1: T,
    tau2: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkipDecision<T: Scalar> {
    pub update: bool,
    pub ratio1: T,
    pub ratio2: T,
    pub fired1: bool,
    pub fired2: bool,
}

fn valid_tau<T: Scalar>(tau: T) -> bool {
    tau.is_infinite() || tau >= T::one()
}

impl<T: Scalar> SkipState<T> {
    pub fn new(d_kl_in: T, tau1: T, tau2: T) -> Result<Self> {
        if !(d_kl_in > T::zero()) || !d_kl_in.is_finite() {
            return Err(CtaError::InvalidArgument(format!(
                "in-domain gap must be positive and finite, got {d_kl_in}"
            )));
        }
        for (name, tau) in [("tau1", tau1), ("tau2", tau2)] {
            if tau.is_nan() || !valid_tau(tau) {
                return Err(CtaError::InvalidArgument(format!(
                    "{name} = {tau} must be >= 1 or infinite"
                )));
            }
        }
        Ok(Self {
            d_kl_in,
            l_ema: None,
            tau1,
            tau2,
        })
    }

    pub fn with_defaults(d_kl_in: T) -> Result<Self> {
        Self::new(d_kl_in, T::lit(DEFAULT_TAU1), T::lit(DEFAULT_TAU2))
    }

    pub fn d_kl_in(&self) -> T {
        self.d_kl_in
    }

    pub fn tau1(&self) -> T {
        self.tau1
    }

    pub fn tau2(&self) -> T {
        self.tau2
    }

    pub fn l_ema(&self) -> Option<T> {
        self.l_ema
    }

    pub fn initialized(&self) -> bool {
        self.l_ema.is_some()
    }

    pub fn observe(&mut self, l_img: T) -> Result<SkipDecision<T>> {
        if !l_img.is_finite() || l_img < T::zero() {
            return Err(CtaError::NonFinite(format!("image loss {l_img}")));
        }
        let ratio1 = l_img / self.d_kl_in;
        let fired1 = ratio1 > self.tau1;
        let (ratio2, fired2, next) = match self.l_ema {
            None => (T::one(), false, l_img),
            Some(prev) => {
                let ratio2 = if prev > T::zero() {
                    l_img / prev
                } else if l_img > T::zero() {
                    T::infinity()
                } else {
                    T::one()
                };
                let next = T::lit(LOSS_EMA_KEEP) * prev + T::lit(LOSS_EMA_RATE) * l_img;
                (ratio2, ratio2 > self.tau2, next)
            }
        };
        self.l_ema = Some(next);
        Ok(SkipDecision {
            update: fired1 || fired2,
            ratio1,
            ratio2,
            fired1,
            fired2,
        })
    }
}

/// Value-returning form of [`SkipState::new`].
pub fn make_skip_state<T: Scalar>(d_kl_in: T, tau1: T, tau2: T) -> Result<SkipState<T>> {
    SkipState::new(d_kl_in, tau1, tau2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let s = SkipState::<f64>::with_defaults(1.0).unwrap();
        assert_eq!(s.tau1(), 1.1);
        assert_eq!(s.tau2(), 1.05);
        assert!(!s.initialized());
    }

    #[test]
    fn criterion_one_fires_above_tau1() {
        let mut s = SkipState::<f64>::with_defaults(1.0).unwrap();
        let d = s.observe(1.2).unwrap();
        assert!(d.fired1 && d.update);
        assert!(!d.fired2);
    }

    #[test]
    fn steady_state_skips() {
        let mut s = SkipState::<f64>::with_defaults(1.0).unwrap();
        s.observe(0.5).unwrap();
        let d = s.observe(0.5).unwrap();
        assert_eq!(d.ratio2, 1.0);
        assert!(!d.update);
    }

    #[test]
    fn criterion_two_catches_a_jump() {
        let mut s = SkipState::<f64>::new(10.0, f64::INFINITY, 1.05).unwrap();
        s.observe(1.0).unwrap();
        assert_eq!(s.l_ema(), Some(1.0));
        let d = s.observe(1.5).unwrap();
        assert_eq!(d.ratio2, 1.5);
        assert!(d.fired2 && d.update && !d.fired1);
        assert!((s.l_ema().unwrap() - 1.005).abs() < 1e-15);
    }

    #[test]
    fn infinite_sentinels_disable_criteria() {
        let mut only2 = SkipState::<f64>::new(1e-9, f64::INFINITY, 1.05).unwrap();
        assert!(!only2.observe(1e9).unwrap().fired1);
        let mut only1 = SkipState::<f64>::new(1.0, 1.1, f64::INFINITY).unwrap();
        only1.observe(1e-6).unwrap();
        assert!(!only1.observe(1e6).unwrap().fired2);
    }

    #[test]
    fn negative_infinity_always_fires() {
        let mut s = SkipState::<f64>::new(1.0, f64::NEG_INFINITY, f64::NEG_INFINITY).unwrap();
        assert!(s.observe(0.0).unwrap().update);
        assert!(s.observe(0.0).unwrap().update);
    }

    #[test]
    fn invalid_construction() {
        assert!(SkipState::<f64>::new(0.0, 1.1, 1.05).is_err());
        assert!(SkipState::<f64>::new(-1.0, 1.1, 1.05).is_err());
        assert!(SkipState::<f64>::new(1.0, 0.9, 1.05).is_err());
        assert!(SkipState::<f64>::new(1.0, 1.1, f64::NAN).is_err());
        let mut s = SkipState::<f64>::with_defaults(1.0).unwrap();
        assert!(s.observe(f64::NAN).is_err());
    }
}

//! Continual test-time adaptation engine.
//!
//! A frozen backbone gets a parallel low-rank adaptor whose only training
//! signal is alignment of EMA-tracked test feature means with precomputed
//! source statistics, at image level and per class. A controller skips
//! gradient steps while the test distribution looks settled. A synthetic
//! simulator and an experiment harness exercise the whole loop under
//! continually changing domain shifts.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! simulator and harness run in `f64`. Aliases for both precisions live at
//! the crate root.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptor;
pub mod alignment;
pub mod container;
pub mod controller;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod scalar;
pub mod simulator;
pub mod stats;

pub use error::{CtaError, Result};
pub use scalar::Scalar;

pub type Vector = numerics::DenseVector<f64>;
pub type Matrix = numerics::DenseMatrix<f64>;
pub type Stats = stats::GaussianStats<f64>;
pub type EmaTracker = stats::EmaMeanTracker<f64>;
pub type Backbone = adaptor::FrozenBackbone<f64>;
pub type Adaptor = adaptor::LowRankAdaptor<f64>;
pub type Gradients = adaptor::AdaptorGradients<f64>;
pub type Roi = alignment::RoiPrediction<f64>;
pub type Bank = alignment::ClassBank<f64>;
pub type Skip = controller::SkipState<f64>;
pub type References = container::ReferenceStats<f64>;

pub type Vector32 = numerics::DenseVector<f32>;
pub type Matrix32 = numerics::DenseMatrix<f32>;
pub type Stats32 = stats::GaussianStats<f32>;
pub type EmaTracker32 = stats::EmaMeanTracker<f32>;
pub type Backbone32 = adaptor::FrozenBackbone<f32>;
pub type Adaptor32 = adaptor::LowRankAdaptor<f32>;
pub type Gradients32 = adaptor::AdaptorGradients<f32>;
pub type Roi32 = alignment::RoiPrediction<f32>;
pub type Bank32 = alignment::ClassBank<f32>;
pub type Skip32 = controller::SkipState<f32>;

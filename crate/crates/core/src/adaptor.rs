//! Frozen affine backbone block with a parallel low-rank residual adaptor.
//!
//! ```text
//! out = (W_b x + b) + W_upᵀ · relu(W_downᵀ · x)
//! ```
//!
//! `W_down` is `d × d/r`, `W_up` is `d/r × d` and starts at exactly zero, so
//! a fresh adaptor leaves the block output untouched.

use crate::container::{read_vector, Container};
use crate::error::{CtaError, Result};
use crate::numerics::{relu, DenseMatrix, DenseVector, SeededRng};
use crate::scalar::Scalar;

/// Single affine block standing in for the pretrained network.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenBackbone<T: Scalar> {
    weight: DenseMatrix<T>,
    bias: DenseVector<T>,
}

impl<T: Scalar> FrozenBackbone<T> {
    pub fn new(weight: DenseMatrix<T>, bias: DenseVector<T>) -> Result<Self> {
        if weight.rows() != weight.cols() || weight.rows() != bias.len() {
            return Err(CtaError::Shape(format!(
                "backbone weight {:?} with bias of length {}",
                weight.shape(),
                bias.len()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn identity(d: usize) -> Result<Self> {
        Self::new(DenseMatrix::identity(d)?, DenseVector::zeros(d))
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    pub fn weight(&self) -> &DenseMatrix<T> {
        &self.weight
    }

    pub fn bias(&self) -> &DenseVector<T> {
        &self.bias
    }

    pub fn param_count(&self) -> usize {
        self.dim() * self.dim() + self.dim()
    }

    pub fn apply(&self, x: &DenseVector<T>) -> Result<DenseVector<T>> {
        self.weight.matvec(x)?.add(&self.bias)
    }
}

/// Down-projection, ReLU, zero-initialised up-projection.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankAdaptor<T: Scalar> {
    down: DenseMatrix<T>,
    up: DenseMatrix<T>,
    ratio: usize,
}

impl<T: Scalar> LowRankAdaptor<T> {
    /// Fresh adaptor for width `d` and reduction ratio `r`. `W_down` entries
    /// are uniform in `±1/√d`; `W_up` is all zeros.
    pub fn new(d: usize, ratio: usize, rng: &mut SeededRng) -> Result<Self> {
        let hidden = hidden_width(d, ratio)?;
        let scale = 1.0 / (d as f64).sqrt();
        let down =
            DenseMatrix::from_fn(d, hidden, |_, _| T::lit(rng.uniform_range(-scale, scale)))?;
        let up = DenseMatrix::zeros(hidden, d)?;
        Ok(Self { down, up, ratio })
    }

    pub fn from_parts(down: DenseMatrix<T>, up: DenseMatrix<T>, ratio: usize) -> Result<Self> {
        let d = down.rows();
        let hidden = hidden_width(d, ratio)?;
        if down.cols() != hidden || up.shape() != (hidden, d) {
            return Err(CtaError::Shape(format!(
                "adaptor with d={d}, r={ratio} needs down {d}x{hidden} and up {hidden}x{d}, got {:?} and {:?}",
                down.shape(),
                up.shape()
            )));
        }
        Ok(Self { down, up, ratio })
    }

    pub fn dim(&self) -> usize {
        self.down.rows()
    }

    pub fn hidden(&self) -> usize {
        self.down.cols()
    }

    pub fn ratio(&self) -> usize {
        self.ratio
    }

    pub fn down(&self) -> &DenseMatrix<T> {
        &self.down
    }

    pub fn up(&self) -> &DenseMatrix<T> {
        &self.up
    }

    /// `2·d·(d/r)`; no bias terms.
    pub fn param_count(&self) -> usize {
        2 * self.dim() * self.hidden()
    }

    /// Flattened `[W_down, W_up]`, row-major. Used by the gradient checks.
    pub fn flatten(&self) -> Vec<T> {
        let mut v = self.down.as_slice().to_vec();
        v.extend_from_slice(self.up.as_slice());
        v
    }

    pub fn unflatten(&self, params: &[T]) -> Result<Self> {
        let n_down = self.down.as_slice().len();
        if params.len() != n_down + self.up.as_slice().len() {
            return Err(CtaError::Shape("flattened adaptor length".into()));
        }
        Self::from_parts(
            DenseMatrix::new(self.dim(), self.hidden(), params[..n_down].to_vec())?,
            DenseMatrix::new(self.hidden(), self.dim(), params[n_down..].to_vec())?,
            self.ratio,
        )
    }
}

fn hidden_width(d: usize, ratio: usize) -> Result<usize> {
    if ratio == 0 || d == 0 || !d.is_multiple_of(ratio) {
        return Err(CtaError::InvalidArgument(format!(
            "reduction ratio {ratio} must be positive and divide d={d}"
        )));
    }
    Ok(d / ratio)
}

/// Intermediate values of one forwarded feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord<T: Scalar> {
    pub input: DenseVector<T>,
    pub pre_activation: DenseVector<T>,
    pub activation: DenseVector<T>,
    pub output: DenseVector<T>,
}

/// One [`ForwardRecord`] per feature in a batch, in forward order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardCache<T: Scalar> {
    entries: Vec<ForwardRecord<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, record: ForwardRecord<T>) {
        self.entries.push(record);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ForwardRecord<T>] {
        &self.entries
    }
}

impl<T: Scalar> FromIterator<ForwardRecord<T>> for ForwardCache<T> {
    fn from_iter<I: IntoIterator<Item = ForwardRecord<T>>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

pub fn forward<T: Scalar>(
    backbone: &FrozenBackbone<T>,
    adaptor: &LowRankAdaptor<T>,
    x: &DenseVector<T>,
) -> Result<ForwardRecord<T>> {
    if x.len() != backbone.dim() || adaptor.dim() != backbone.dim() {
        return Err(CtaError::Shape(format!(
            "forward: input {}, backbone {}, adaptor {}",
            x.len(),
            backbone.dim(),
            adaptor.dim()
        )));
    }
    let block = backbone.apply(x)?;
    let pre_activation = adaptor.down.matvec_transposed(x)?;
    let activation = relu(&pre_activation);
    let branch = adaptor.up.matvec_transposed(&activation)?;
    let output = block.add(&branch)?;
    Ok(ForwardRecord {
        input: x.clone(),
        pre_activation,
        activation,
        output,
    })
}

pub fn forward_batch<T: Scalar>(
    backbone: &FrozenBackbone<T>,
    adaptor: &LowRankAdaptor<T>,
    inputs: &[DenseVector<T>],
) -> Result<ForwardCache<T>> {
    inputs
        .iter()
        .map(|x| forward(backbone, adaptor, x))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneGradients<T: Scalar> {
    pub weight: DenseMatrix<T>,
    pub bias: DenseVector<T>,
}

/// Batch-summed gradients of the adaptor, plus the backbone in full-finetune
/// mode.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptorGradients<T: Scalar> {
    pub down: DenseMatrix<T>,
    pub up: DenseMatrix<T>,
    pub backbone: Option<BackboneGradients<T>>,
}

impl<T: Scalar> AdaptorGradients<T> {
    pub fn is_finite(&self) -> bool {
        self.down.is_finite()
            && self.up.is_finite()
            && self
                .backbone
                .as_ref()
                .is_none_or(|b| b.weight.is_finite() && b.bias.is_finite())
    }
}

/// Gradients of the adaptor weights given `dL/d out` for each cached feature.
pub fn backward<T: Scalar>(
    adaptor: &LowRankAdaptor<T>,
    cache: &ForwardCache<T>,
    upstream: &[DenseVector<T>],
) -> Result<AdaptorGradients<T>> {
    if cache.len() != upstream.len() {
        return Err(CtaError::Shape(format!(
            "backward: {} cached inputs but {} upstream gradients",
            cache.len(),
            upstream.len()
        )));
    }
    let mut g_down = DenseMatrix::zeros(adaptor.dim(), adaptor.hidden())?;
    let mut g_up = DenseMatrix::zeros(adaptor.hidden(), adaptor.dim())?;
    for (rec, g) in cache.entries().iter().zip(upstream) {
        if g.len() != adaptor.dim() {
            return Err(CtaError::Shape(format!(
                "upstream gradient of length {}, expected {}",
                g.len(),
                adaptor.dim()
            )));
        }
        g_up.add_outer(T::one(), &rec.activation, g)?;
        let through_up = adaptor.up.matvec(g)?;
        let masked = DenseVector::new(
            through_up
                .iter()
                .zip(rec.pre_activation.iter())
                .map(|(&v, &z)| if z > T::zero() { v } else { T::zero() })
                .collect(),
        )?;
        g_down.add_outer(T::one(), &rec.input, &masked)?;
    }
    let grads = AdaptorGradients {
        down: g_down,
        up: g_up,
        backbone: None,
    };
    if !grads.is_finite() {
        return Err(CtaError::NonFinite("adaptor gradients".into()));
    }
    Ok(grads)
}

/// [`backward`] plus gradients of the backbone weight and bias.
pub fn full_finetune_backward<T: Scalar>(
    adaptor: &LowRankAdaptor<T>,
    cache: &ForwardCache<T>,
    upstream: &[DenseVector<T>],
) -> Result<AdaptorGradients<T>> {
    let mut grads = backward(adaptor, cache, upstream)?;
    let d = adaptor.dim();
    let mut weight = DenseMatrix::zeros(d, d)?;
    let mut bias = DenseVector::zeros(d);
    for (rec, g) in cache.entries().iter().zip(upstream) {
        weight.add_outer(T::one(), g, &rec.input)?;
        bias.axpy(T::one(), g)?;
    }
    grads.backbone = Some(BackboneGradients { weight, bias });
    if !grads.is_finite() {
        return Err(CtaError::NonFinite("backbone gradients".into()));
    }
    Ok(grads)
}

/// Plain SGD on the adaptor: `W ← W − lr·g`.
pub fn sgd_step<T: Scalar>(
    adaptor: &mut LowRankAdaptor<T>,
    grads: &AdaptorGradients<T>,
    lr: T,
) -> Result<()> {
    check_step(grads, lr)?;
    if grads.down.shape() != adaptor.down.shape() || grads.up.shape() != adaptor.up.shape() {
        return Err(CtaError::Shape(
            "gradient shapes do not match adaptor".into(),
        ));
    }
    adaptor.down.axpy(-lr, &grads.down)?;
    adaptor.up.axpy(-lr, &grads.up)?;
    Ok(())
}

/// SGD on the backbone. Only the full-finetune baseline calls this.
pub fn sgd_step_backbone<T: Scalar>(
    backbone: &mut FrozenBackbone<T>,
    grads: &AdaptorGradients<T>,
    lr: T,
) -> Result<()> {
    check_step(grads, lr)?;
    let g = grads
        .backbone
        .as_ref()
        .ok_or_else(|| CtaError::InvalidArgument("no backbone gradients".into()))?;
    backbone.weight.axpy(-lr, &g.weight)?;
    backbone.bias.axpy(-lr, &g.bias)?;
    Ok(())
}

fn check_step<T: Scalar>(grads: &AdaptorGradients<T>, lr: T) -> Result<()> {
    if !(lr >= T::zero()) || !lr.is_finite() {
        return Err(CtaError::InvalidArgument(format!("learning rate {lr}")));
    }
    if !grads.is_finite() {
        return Err(CtaError::NonFinite("gradients passed to SGD".into()));
    }
    Ok(())
}

/// Writes backbone and adaptor weights in the `ctastats v1` container.
pub fn weights_to_container<T: Scalar>(
    backbone: &FrozenBackbone<T>,
    adaptor: &LowRankAdaptor<T>,
) -> Container {
    let mut c = Container::new(backbone.dim(), 0).attr("r", adaptor.ratio());
    c.push("backbone.weight", backbone.weight.as_slice().iter());
    c.push("backbone.bias", backbone.bias.iter());
    c.push("adaptor.down", adaptor.down.as_slice().iter());
    c.push("adaptor.up", adaptor.up.as_slice().iter());
    c
}

pub fn weights_from_container<T: Scalar>(
    c: &Container,
) -> Result<(FrozenBackbone<T>, LowRankAdaptor<T>)> {
    let d = c.dim;
    let ratio: usize = c
        .get_attr("r")
        .ok_or_else(|| CtaError::Parse("weights header lacks r=".into()))?
        .parse()
        .map_err(|_| CtaError::Parse("bad r= value".into()))?;
    let hidden = hidden_width(d, ratio)?;
    let weight = DenseMatrix::new(
        d,
        d,
        read_vector::<T>(c, "backbone.weight", d * d)?.into_vec(),
    )?;
    let bias = read_vector::<T>(c, "backbone.bias", d)?;
    let down = DenseMatrix::new(
        d,
        hidden,
        read_vector::<T>(c, "adaptor.down", d * hidden)?.into_vec(),
    )?;
    let up = DenseMatrix::new(
        hidden,
        d,
        read_vector::<T>(c, "adaptor.up", d * hidden)?.into_vec(),
    )?;
    Ok((
        FrozenBackbone::new(weight, bias)?,
        LowRankAdaptor::from_parts(down, up, ratio)?,
    ))
}

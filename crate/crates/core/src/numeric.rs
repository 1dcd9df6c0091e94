//! Dense numeric primitives shared by the model and the trainer: stabilized
//! softmax, the AdaDelta optimizer, parameter initialization and a central
//! finite-difference gradient checker.

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, IxDyn, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub mod ddouble;

pub use ddouble::{DoubleDouble, Real};

pub type Tensor = ArrayD<f64>;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log Σ exp(x)` over the given values.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.into_iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax over the positions where `mask` is set; masked positions are exactly 0.
pub fn masked_softmax(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != mask.len() {
        return Err(Error::Shape {
            name: "mask".into(),
            expected: vec![scores.len()],
            found: vec![mask.len()],
        });
    }
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptyMask);
    }
    let mut out: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(&s, &m)| if m { (s - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// Softmax over a dense slice (every entry selected).
pub fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    values.iter_mut().for_each(|v| *v /= total);
}

/// A named collection of trainable tensors with a fixed iteration order.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, f64>)>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, f64>)>;

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for (_, t) in self.tensors() {
            out.extend(t.iter().copied());
        }
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars(), "flat length mismatch");
        let mut offset = 0;
        for (_, mut t) in self.tensors_mut() {
            for (dst, src) in t.iter_mut().zip(&flat[offset..]) {
                *dst = *src;
            }
            offset += t.len();
        }
    }

    fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, factor: f64) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    /// `self += factor * other`, tensor by tensor.
    fn add_scaled(&mut self, other: &Self, factor: f64) {
        let src = other.tensors();
        for ((_, mut dst), (_, s)) in self.tensors_mut().into_iter().zip(src) {
            dst.scaled_add(factor, &s);
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<P: ParamSet>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Running averages of squared gradients and squared updates, one pair per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub rho: f64,
    pub eps: f64,
    pub sq_grad: Vec<Tensor>,
    pub sq_update: Vec<Tensor>,
}

impl OptimizerState {
    pub const DEFAULT_RHO: f64 = 0.95;
    pub const DEFAULT_EPS: f64 = 1e-6;

    pub fn new<P: ParamSet>(params: &P, rho: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.raw_dim()))
            .collect();
        Self {
            rho,
            eps,
            sq_grad: zeros.clone(),
            sq_update: zeros,
        }
    }

    pub fn with_defaults<P: ParamSet>(params: &P) -> Self {
        Self::new(params, Self::DEFAULT_RHO, Self::DEFAULT_EPS)
    }
}

/// One AdaDelta update; `grads` are loss gradients (the step descends).
pub fn adadelta_step<P: ParamSet>(
    params: &mut P,
    grads: &P,
    state: &mut OptimizerState,
    lr_scale: f64,
) -> Result<()> {
    let grad_views = grads.tensors();
    let mut param_views = params.tensors_mut();
    if grad_views.len() != param_views.len()
        || state.sq_grad.len() != param_views.len()
        || state.sq_update.len() != param_views.len()
    {
        return Err(Error::InvalidArgument(
            "parameter, gradient and accumulator counts differ".into(),
        ));
    }
    for (i, ((name, p), (_, g))) in param_views.iter().zip(&grad_views).enumerate() {
        for (other, label) in [
            (g.shape(), "gradient"),
            (state.sq_grad[i].shape(), "E[g^2]"),
            (state.sq_update[i].shape(), "E[dx^2]"),
        ] {
            if other != p.shape() {
                return Err(Error::Shape {
                    name: format!("{name} ({label})"),
                    expected: p.shape().to_vec(),
                    found: other.to_vec(),
                });
            }
        }
    }
    let (rho, eps) = (state.rho, state.eps);
    for (i, ((_, p), (_, g))) in param_views.iter_mut().zip(&grad_views).enumerate() {
        Zip::from(p)
            .and(g)
            .and(&mut state.sq_grad[i])
            .and(&mut state.sq_update[i])
            .for_each(|p, &g, eg2, edx2| {
                *eg2 = rho * *eg2 + (1.0 - rho) * g * g;
                let dx = -((*edx2 + eps).sqrt() / (*eg2 + eps).sqrt()) * g;
                *edx2 = rho * *edx2 + (1.0 - rho) * dx * dx;
                *p += lr_scale * dx;
            });
    }
    Ok(())
}

/// Compares an analytic gradient with central differences, coordinate by coordinate.
///
/// `loss` and `gradient` are evaluated at flat parameter vectors. The loss may
/// be computed in any [`Real`] precision; the difference of the two perturbed
/// values is taken at that precision before rounding. The step actually taken,
/// `fl(θ+ε) - fl(θ-ε)`, is used as the denominator. The result is
/// `max_i |a_i - n_i| / max(1e-8, |a_i| + |n_i|)`.
pub fn gradient_check<V, L, G>(loss: L, gradient: G, params: &[f64], eps: f64) -> Result<f64>
where
    V: Real,
    L: Fn(&[f64]) -> V,
    G: FnOnce(&[f64]) -> Vec<f64>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    if !loss(params).is_finite() {
        return Err(Error::NonFinite("loss at the base point".into()));
    }
    let analytic = gradient(params);
    if analytic.len() != params.len() {
        return Err(Error::Shape {
            name: "analytic gradient".into(),
            expected: vec![params.len()],
            found: vec![analytic.len()],
        });
    }
    let mut theta = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let orig = theta[i];
        let (up, down) = (orig + eps, orig - eps);
        theta[i] = up;
        let plus = loss(&theta);
        theta[i] = down;
        let minus = loss(&theta);
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss near coordinate {i}")));
        }
        let numeric = ((plus - minus) / V::from(up - down)).to_f64();
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    GlorotUniform,
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

/// Glorot bound for a tensor: fan-in is the trailing dimension, fan-out the leading one.
pub fn glorot_bound(shape: &[usize]) -> f64 {
    let (fan_out, fan_in) = match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [rows, .., cols] => (*rows, *cols),
    };
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Initializes tensors in spec order from a single seeded stream. Biases are always zero.
pub fn init_params(specs: &[ParamSpec], seed: u64, scheme: InitScheme) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    specs
        .iter()
        .map(|spec| {
            let dim = IxDyn(&spec.shape);
            match (scheme, spec.kind) {
                (InitScheme::GlorotUniform, ParamKind::Weight) => {
                    let a = glorot_bound(&spec.shape);
                    Tensor::from_shape_simple_fn(dim, || rng.gen_range(-a..a))
                }
                _ => Tensor::zeros(dim),
            }
        })
        .collect()
}

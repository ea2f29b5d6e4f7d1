//! Floating-point abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the solvers and the model are written against: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + ScalarOperand
    + LinalgScalar
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal; lossy for `f32`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Tolerance used for feasibility and reduced-cost tests.
    fn tolerance() -> Self;
}

impl Scalar for f32 {
    fn tolerance() -> Self {
        1e-5
    }
}

impl Scalar for f64 {
    fn tolerance() -> Self {
        1e-12
    }
}

/// Numerically stable `ln Σ exp(x_i)` over an indexed family.
pub(crate) fn log_sum_exp<T: Scalar>(len: usize, mut f: impl FnMut(usize) -> T) -> T {
    let mut max = T::neg_infinity();
    for i in 0..len {
        max = max.max(f(i));
    }
    if !max.is_finite() {
        return max;
    }
    let mut acc = T::zero();
    for i in 0..len {
        acc += (f(i) - max).exp();
    }
    max + acc.ln()
}

/// Softmax of a slice, written into `out`.
pub(crate) fn softmax_into<T: Scalar>(x: &[T], out: &mut [T]) {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn softmax<T: Scalar>(x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    softmax_into(x, &mut out);
    out
}

/// Subtracts the mean so the vector sums to zero.
pub(crate) fn centre<T: Scalar>(v: &mut [T]) {
    if v.is_empty() {
        return;
    }
    let mean = v.iter().copied().sum::<T>() / T::lit(v.len() as f64);
    for x in v.iter_mut() {
        *x -= mean;
    }
}

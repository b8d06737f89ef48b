//! Scalar abstraction shared by every numerical module.
//!
//! The library is written against [`Real`] so the same code runs in `f32`
//! for quick exploratory runs and in `f64` for verification work. Monte Carlo
//! orchestration in [`crate::harness`] is fixed to `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar usable by the grid, process and kernel code.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Draw one standard normal variate.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Convert an `f64` literal. Panics only for values the type cannot hold,
    /// which never happens for the finite constants used in this crate.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 constant representable in scalar type")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

impl Real for f32 {
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

/// Deterministic pairwise summation. The reduction tree depends only on the
/// slice length, so results are reproducible across schedules.
pub fn pairwise_sum<T: Real>(values: &[T]) -> T {
    const BLOCK: usize = 64;
    if values.len() <= BLOCK {
        let mut acc = T::zero();
        for &v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise sum of `f(i)` for `i in 0..n` without materializing the terms
/// when `n` is small; large reductions go through a buffer.
pub fn pairwise_sum_by<T: Real>(n: usize, f: impl Fn(usize) -> T) -> T {
    if n <= 64 {
        let mut acc = T::zero();
        for i in 0..n {
            acc += f(i);
        }
        return acc;
    }
    let buf: Vec<T> = (0..n).map(f).collect();
    pairwise_sum(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let v: Vec<f64> = (0..10_000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 49_995_000.0);
        assert_eq!(pairwise_sum_by(10_000, |i| i as f64), 49_995_000.0);
    }

    #[test]
    fn pairwise_reduces_cancellation_error() {
        let mut v = vec![1.0e8_f32];
        v.extend(std::iter::repeat(1.0_f32).take(100_000));
        let naive: f32 = v.iter().sum();
        let pw = pairwise_sum(&v);
        assert!((pw as f64 - 100_100_000.0).abs() < (naive as f64 - 100_100_000.0).abs() + 1.0);
    }
}

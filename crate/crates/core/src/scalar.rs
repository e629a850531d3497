//! Scalar abstractions shared by the metric and probability code.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Float, FromPrimitive, Num};

/// A field in which `2^-k` is representable: `f32`, `f64`, or exact rationals.
pub trait Dyadic: Num + Clone + PartialOrd + std::fmt::Debug {
    /// `2^-k`.
    fn inv_pow2(k: usize) -> Self {
        let two = Self::one() + Self::one();
        let mut denom = Self::one();
        for _ in 0..k {
            denom = denom * two.clone();
        }
        Self::one() / denom
    }
}

impl Dyadic for f32 {
    fn inv_pow2(k: usize) -> Self {
        2f32.powi(-(k as i32))
    }
}

impl Dyadic for f64 {
    fn inv_pow2(k: usize) -> Self {
        2f64.powi(-(k as i32))
    }
}

impl Dyadic for BigRational {
    fn inv_pow2(k: usize) -> Self {
        BigRational::new(BigInt::from(1), BigInt::from(1) << k)
    }
}

/// Floating-point scalar used for probability vectors and packing bounds.
pub trait Real: Float + FromPrimitive + Dyadic + Default + Send + Sync + 'static {
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite value")
    }

    /// Slack for sum-to-one and boundary comparisons.
    fn tolerance() -> Self;
}

impl Real for f32 {
    fn tolerance() -> Self {
        1e-5
    }
}

impl Real for f64 {
    fn tolerance() -> Self {
        1e-12
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_powers_agree() {
        for k in 0..10 {
            let exact = BigRational::inv_pow2(k);
            let approx = f64::inv_pow2(k);
            let back = BigRational::from_float(approx).unwrap();
            assert_eq!(exact, back);
            assert_eq!(f32::inv_pow2(k) as f64, approx);
        }
        assert_eq!(<BigRational as Dyadic>::inv_pow2(3), BigRational::new(1.into(), 8.into()));
    }
}

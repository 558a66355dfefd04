//! Floating-point abstraction shared by the model, the lattice and the
//! optimiser. Everything numeric in this crate is generic over [`Scalar`];
//! concrete aliases live at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Tag written into checkpoint files so a reader knows the element width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Option<DType> {
        match s {
            "f32" => Some(DType::F32),
            "f64" => Some(DType::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("literal fits the scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Log-probability standing in for an impossible event inside the lattice.
pub const LOG_ZERO: f64 = -1e9;

/// Anything at or below this is treated as [`LOG_ZERO`].
pub const LOG_ZERO_THRESHOLD: f64 = -1e8;

#[inline]
pub fn log_zero<T: Scalar>() -> T {
    T::lit(LOG_ZERO)
}

#[inline]
pub fn is_log_zero<T: Scalar>(x: T) -> bool {
    x <= T::lit(LOG_ZERO_THRESHOLD)
}

/// `log(exp(a) + exp(b))` that keeps the sentinel absorbing.
#[inline]
pub fn log_add<T: Scalar>(a: T, b: T) -> T {
    if is_log_zero(a) {
        return if is_log_zero(b) { log_zero() } else { b };
    }
    if is_log_zero(b) {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Left-to-right log-sum-exp over an iterator; empty input gives the sentinel.
pub fn log_sum_exp<T: Scalar, I: IntoIterator<Item = T>>(xs: I) -> T {
    let xs: Vec<T> = xs.into_iter().filter(|x| !is_log_zero(*x)).collect();
    let Some(max) = xs.iter().copied().reduce(T::max) else {
        return log_zero();
    };
    let total: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + total.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_matches_direct() {
        let v: f64 = log_add(0.1f64.ln(), 0.3f64.ln());
        assert!((v - 0.4f64.ln()).abs() < 1e-15);
        assert_eq!(log_add(log_zero::<f64>(), -2.0), -2.0);
        assert!(is_log_zero(log_add(log_zero::<f64>(), log_zero())));
    }

    #[test]
    fn lse_of_nothing_is_sentinel() {
        assert!(is_log_zero(log_sum_exp::<f32, _>(Vec::new())));
        let v = log_sum_exp([0.5f64.ln(), 0.25f64.ln(), LOG_ZERO]);
        assert!((v - 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn le_roundtrip_is_bitwise() {
        let mut buf = Vec::new();
        std::f32::consts::PI.write_le(&mut buf);
        (-1.0e-300f64).write_le(&mut buf);
        assert_eq!(f32::read_le(&buf[..4]).to_bits(), std::f32::consts::PI.to_bits());
        assert_eq!(f64::read_le(&buf[4..]).to_bits(), (-1.0e-300f64).to_bits());
    }
}

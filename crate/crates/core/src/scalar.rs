//! Numeric field abstraction shared by the exact and floating point paths.

use num_bigint::BigInt;
use num_complex::Complex;
use num_rational::BigRational;
use num_traits::{Num, One, ToPrimitive, Zero};
use std::fmt::Debug;
use std::ops::Neg;

pub type Q = BigRational;
pub type C64 = Complex<f64>;
pub type CQ = Complex<BigRational>;

/// A field element usable by the dense elimination routines.
pub trait Scalar: Clone + Num + Neg<Output = Self> + Debug + Send + Sync + 'static {
    /// Exact arithmetic (no rounding): pivots only need to be nonzero.
    const EXACT: bool;
    /// Size used for pivot selection.
    fn magnitude(&self) -> f64;
    fn from_i64(v: i64) -> Self;
}

impl Scalar for f64 {
    const EXACT: bool = false;
    fn magnitude(&self) -> f64 {
        self.abs()
    }
    fn from_i64(v: i64) -> Self {
        v as f64
    }
}

impl Scalar for BigRational {
    const EXACT: bool = true;
    fn magnitude(&self) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            1.0
        }
    }
    fn from_i64(v: i64) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }
}

impl Scalar for Complex<f64> {
    const EXACT: bool = false;
    fn magnitude(&self) -> f64 {
        self.norm()
    }
    fn from_i64(v: i64) -> Self {
        Complex::new(v as f64, 0.0)
    }
}

impl Scalar for Complex<BigRational> {
    const EXACT: bool = true;
    fn magnitude(&self) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            1.0
        }
    }
    fn from_i64(v: i64) -> Self {
        Complex::new(BigRational::from_i64(v), BigRational::zero())
    }
}

/// Rational from a numerator/denominator pair.
pub fn q(num: i64, den: i64) -> Q {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn q_to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Exact rational value of a finite float.
pub fn f64_to_q(x: f64) -> Q {
    BigRational::from_float(x).expect("finite float")
}

pub fn cq_to_c64(z: &CQ) -> C64 {
    Complex::new(q_to_f64(&z.re), q_to_f64(&z.im))
}

pub fn q_one() -> Q {
    Q::one()
}

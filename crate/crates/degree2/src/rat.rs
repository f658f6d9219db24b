//! Exact rational scalars used everywhere in the crate.

use num::bigint::BigInt;
pub use num::rational::BigRational;
use num::traits::{One, Signed, Zero};

/// Scalar type: arbitrary-precision rational.
pub type Q = BigRational;

/// Integer as a rational.
pub fn q(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

/// Fraction `n/d` as a rational. Panics on `d == 0`.
pub fn qq(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn is_zero(v: &Q) -> bool {
    v.is_zero()
}

pub fn is_one(v: &Q) -> bool {
    v.is_one()
}

/// Renders a rational as `n` or `n/d`.
pub fn fmt_q(v: &Q) -> String {
    v.to_string()
}

/// True if `v` is a negative rational.
pub fn is_negative(v: &Q) -> bool {
    v.is_negative()
}

//! Scalar abstraction for the numeric kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar the generic kernels are written against.
///
/// Implemented by `f32` and `f64` through the blanket impl; anything
/// satisfying the bounds (a `num_traits::Float` with assignment operators,
/// conversion from primitives, and summation) works.
pub trait Real:
    Float + NumAssign + FromPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lifts an `f64` constant into the scalar type.
    ///
    /// Panics if the value is not representable, which cannot happen for the
    /// finite literals this crate uses.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("constant representable in scalar type")
    }

    /// Lifts a `usize` count into the scalar type.
    fn of_usize(value: usize) -> Self {
        Self::from_usize(value).expect("count representable in scalar type")
    }
}

impl<T> Real for T where
    T: Float + NumAssign + FromPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_of_squares<F: Real>(values: &[F]) -> F {
        values.iter().map(|&v| v * v).sum()
    }

    #[test]
    fn works_for_both_widths() {
        assert_eq!(sum_of_squares(&[1.0f64, 2.0, 3.0]), 14.0);
        assert_eq!(sum_of_squares(&[1.0f32, 2.0, 3.0]), 14.0);
        assert_eq!(f64::of(0.5), 0.5);
        assert_eq!(f32::of_usize(7), 7.0);
    }
}

//! Scalar abstraction shared by the estimation code.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign};

/// Real floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + NumAssign + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` constant.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 literal representable")
    }

    /// Conversion from a count.
    fn from_count(count: usize) -> Self {
        Self::from_usize(count).expect("count representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Neumaier-compensated sum of a sequence.
pub fn compensated_sum<T: Real, I: IntoIterator<Item = T>>(values: I) -> T {
    let mut sum = T::zero();
    let mut carry = T::zero();
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancelled_terms() {
        let v = [1.0f64, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(v), 2.0);
        assert_eq!(compensated_sum(Vec::<f64>::new()), 0.0);
    }

    #[test]
    fn literals_convert_for_both_widths() {
        assert_eq!(<f32 as Real>::lit(0.5), 0.5f32);
        assert_eq!(<f64 as Real>::from_count(7), 7.0);
    }
}

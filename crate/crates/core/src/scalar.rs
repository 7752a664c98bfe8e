use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar used by every metric: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable as float")
    }

    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 representable as float")
    }

    fn lossy_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Rounds half away from zero to `places` decimals.
pub fn round_to<T: Scalar>(x: T, places: u32) -> T {
    let factor = T::from_f64_lossy(10f64.powi(places as i32));
    (x * factor).round() / factor
}

/// Arithmetic mean; `None` for an empty slice.
pub fn mean<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let total: T = values.iter().copied().sum();
    Some(total / T::from_usize_lossy(values.len()))
}

/// Population standard deviation (n divisor).
pub fn population_sd<T: Scalar>(values: &[T]) -> Option<T> {
    let m = mean(values)?;
    let var: T = values.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / T::from_usize_lossy(values.len());
    Some(var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_matches_table_presentation() {
        assert_eq!(round_to(0.41166666_f64, 3), 0.412);
        assert_eq!(round_to(89.583333_f64, 2), 89.58);
        assert_eq!(round_to(3.3333_f32, 1), 3.3);
    }

    #[test]
    fn sd_of_constant_is_zero() {
        assert_eq!(population_sd(&[0.2_f64; 4]), Some(0.0));
        assert_eq!(population_sd::<f64>(&[]), None);
    }
}

//! Floating-point abstraction shared by every numeric routine in the crate.
//!
//! Linear algebra goes through `nalgebra::RealField`; the special functions and
//! random variates that nalgebra does not provide are routed through `f64`
//! and converted back.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Open01, StandardNormal};

/// Real scalar usable by the samplers and density code: `f32` or `f64`.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + std::fmt::Display + 'static
{
    /// Converts an `f64` literal, rounding if necessary.
    fn lit(x: f64) -> Self;

    fn as_f64(self) -> f64;

    fn from_count(n: usize) -> Self {
        Self::lit(n as f64)
    }

    fn neg_infinity() -> Self;

    fn infinity() -> Self;

    fn ln_gamma(self) -> Self {
        Self::lit(statrs::function::gamma::ln_gamma(self.as_f64()))
    }

    fn digamma(self) -> Self {
        Self::lit(statrs::function::gamma::digamma(self.as_f64()))
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Uniform draw on the open interval (0, 1).
    fn open01<R: Rng + ?Sized>(rng: &mut R) -> Self;

    fn chi_squared<R: Rng + ?Sized>(rng: &mut R, dof: Self) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn lit(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn neg_infinity() -> Self {
                <$t>::NEG_INFINITY
            }

            #[inline]
            fn infinity() -> Self {
                <$t>::INFINITY
            }

            #[inline]
            fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            #[inline]
            fn open01<R: Rng + ?Sized>(rng: &mut R) -> Self {
                Open01.sample(rng)
            }

            fn chi_squared<R: Rng + ?Sized>(rng: &mut R, dof: Self) -> Self {
                ChiSquared::new(dof)
                    .expect("chi-squared degrees of freedom must be positive")
                    .sample(rng)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// `ln C(n, k)` through log-gamma, so it never overflows.
pub fn ln_binomial<T: Scalar>(n: usize, k: usize) -> T {
    assert!(k <= n, "ln_binomial: k = {k} exceeds n = {n}");
    let ln = |m: usize| statrs::function::gamma::ln_gamma(m as f64 + 1.0);
    T::lit(ln(n) - ln(k) - ln(n - k))
}

/// Exact `C(n, k)` saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step.
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials_agree() {
        assert_eq!(binomial(6, 2), 15);
        assert_eq!(binomial(10, 0), 1);
        assert_eq!(binomial(3, 5), 0);
        assert_eq!(binomial(1000, 5), 8_250_291_250_200);
        let ln: f64 = ln_binomial(1000, 5);
        assert!((ln - (8_250_291_250_200f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn ln_gamma_matches_factorial() {
        let v: f64 = Scalar::ln_gamma(5.0);
        assert!((v - 24f64.ln()).abs() < 1e-12);
        let v32: f32 = Scalar::ln_gamma(5.0f32);
        assert!((v32 - 24f32.ln()).abs() < 1e-5);
    }
}

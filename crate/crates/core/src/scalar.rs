//! Scalar abstraction shared by the numeric modules.
//!
//! Geometry, decoding, the loss and the few-shot head are written against
//! [`Real`], so the same code runs in `f32` (deployment) and `f64`
//! (verification, gradient checks).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Conversion from a count.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Logistic sigmoid, evaluated without overflow for large `|x|`.
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable softmax. Empty input yields an empty vector.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let Some(max) = logits.iter().copied().reduce(T::max) else {
        return Vec::new();
    };
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `ln Σ exp(z)`.
pub fn log_sum_exp<T: Real>(logits: &[T]) -> T {
    let Some(max) = logits.iter().copied().reduce(T::max) else {
        return T::neg_infinity();
    };
    let total: T = logits.iter().map(|&z| (z - max).exp()).sum();
    max + total.ln()
}

/// Index of the largest element; the first one wins ties.
pub fn argmax<T: Real>(values: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_symmetric_and_saturates() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(3.0f64) + sigmoid(-3.0f64) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-20.0f64) < 1e-8);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f32), 1.0);
    }

    #[test]
    fn softplus_matches_naive_form_in_safe_range() {
        for &x in &[-5.0f64, -0.3, 0.0, 0.7, 4.0] {
            assert!((softplus(x) - (1.0 + x.exp()).ln()).abs() < 1e-14);
        }
        assert_eq!(softplus(1000.0f64), 1000.0);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0f64, 999.0, -3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1] && p[1] > p[2]);
        assert!(softmax::<f64>(&[]).is_empty());
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&[1.0f64, 3.0, 3.0]), Some(1));
        assert_eq!(argmax::<f32>(&[]), None);
    }
}

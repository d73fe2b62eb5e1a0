//! Combining two binary classifiers by the confidence of their predictions.
//!
//! A binary model that predicts class `c` with cross-entropy `e` implicitly
//! assigns `exp(-e)` to `c` and `1 - exp(-e)` to the other class, so the
//! error it would have had on the other class is `-ln(1 - exp(-e))`. That
//! maps both models' errors into the same class frame for comparison.

use serde::{Deserialize, Serialize};

use crate::blstm::{loss, ClassPosterior};
use crate::error::{Error, Result};

/// Errors below this are treated as this value.
pub const MIN_ERROR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryDecision {
    pub predicted_class: usize,
    /// Cross-entropy of the predicted class.
    pub error: f64,
}

impl BinaryDecision {
    pub fn new(predicted_class: usize, error: f64) -> Result<Self> {
        if predicted_class > 1 {
            return Err(Error::InvalidInput(format!("binary class expected, got {predicted_class}")));
        }
        if !error.is_finite() || error < 0.0 {
            return Err(Error::InvalidError(error));
        }
        Ok(Self { predicted_class, error })
    }

    /// Decision read off a two-class posterior.
    pub fn from_posterior(posterior: &ClassPosterior) -> Result<Self> {
        if posterior.probs.len() != 2 {
            return Err(Error::InvalidInput("combination needs two-class posteriors".into()));
        }
        Self::new(posterior.predicted, loss(posterior, posterior.predicted))
    }

    /// The error this decision implies for `class`.
    pub fn error_for(&self, class: usize) -> f64 {
        if class == self.predicted_class {
            self.error
        } else {
            opposite_error(self.error).unwrap_or(f64::INFINITY)
        }
    }
}

/// Error on the other class implied by error `e` on one class. Zero maps to
/// infinity; the function is its own inverse.
pub fn opposite_error(e: f64) -> Result<f64> {
    if e.is_nan() || e < 0.0 {
        return Err(Error::InvalidError(e));
    }
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    if e == f64::INFINITY {
        return Ok(0.0);
    }
    let e = e.max(MIN_ERROR);
    // -ln(1 - exp(-e)) without cancellation for small or large e
    Ok(-(-(-e).exp_m1()).ln())
}

/// Agreeing models keep their class with the smaller error. Otherwise each
/// model's error is put in the frame of its own predicted class and the
/// lower one wins; exact ties go to `a`.
pub fn combine(a: BinaryDecision, b: BinaryDecision) -> BinaryDecision {
    if a.predicted_class == b.predicted_class {
        return BinaryDecision {
            predicted_class: a.predicted_class,
            error: a.error.min(b.error),
        };
    }
    // In a's class frame, a claims a.error and b implies
    // opposite_error(b.error). The map is decreasing, so a wins exactly when
    // a.error <= b.error.
    if b.error < a.error {
        b
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(c: usize, e: f64) -> BinaryDecision {
        BinaryDecision::new(c, e).unwrap()
    }

    #[test]
    fn fixed_point_and_value() {
        let ln2 = std::f64::consts::LN_2;
        assert!((opposite_error(ln2).unwrap() - ln2).abs() < 1e-12);
        assert!((opposite_error(0.1).unwrap() - 2.352_168).abs() < 1e-6);
        assert_eq!(opposite_error(0.0).unwrap(), f64::INFINITY);
        assert!(matches!(opposite_error(-1.0), Err(Error::InvalidError(_))));
    }

    #[test]
    fn involution() {
        for &e in &[1e-6, 0.01, 0.5, 1.0, 3.0, 10.0] {
            let back = opposite_error(opposite_error(e).unwrap()).unwrap();
            assert!((back - e).abs() < 1e-9, "{e} -> {back}");
        }
    }

    #[test]
    fn agreement_keeps_class() {
        let c = combine(d(1, 0.4), d(1, 0.2));
        assert_eq!(c, d(1, 0.2));
    }

    #[test]
    fn disagreement_picks_lower_error() {
        assert_eq!(combine(d(0, 0.1), d(1, 0.5)).predicted_class, 0);
        assert_eq!(combine(d(0, 0.5), d(1, 0.1)).predicted_class, 1);
        assert_eq!(combine(d(0, 0.3), d(1, 0.3)).predicted_class, 0);
    }

    #[test]
    fn from_binary_posterior() {
        let p = ClassPosterior::from_probs(vec![0.2, 0.8]);
        let dec = BinaryDecision::from_posterior(&p).unwrap();
        assert_eq!(dec.predicted_class, 1);
        assert!((dec.error - (-(0.8f64).ln())).abs() < 1e-12);
        assert!((dec.error_for(0) - (-(0.2f64).ln())).abs() < 1e-12);
    }
}

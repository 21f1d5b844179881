//! Saturating activations `g_k(x) = log1p^(k)(max(0, x))`.
//!
//! `k = 1` is the usual `log(1 + relu(x))`; `k = 2` is the l0 approximation
//! activation; larger `k` stack further logarithms. All of them share the
//! support of `relu`, so they only change magnitudes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActivationSpec {
    folds: u32,
}

impl ActivationSpec {
    pub fn new(folds: u32) -> Result<Self> {
        if folds == 0 {
            return Err(Error::InvalidParameter(
                "activation fold count must be >= 1".into(),
            ));
        }
        Ok(Self { folds })
    }

    pub fn folds(self) -> u32 {
        self.folds
    }
}

#[inline]
pub fn activate(x: f64, spec: ActivationSpec) -> f64 {
    let mut y = x.max(0.0);
    for _ in 0..spec.folds {
        y = y.ln_1p();
    }
    y
}

/// Derivative of [`activate`]; 0 for `x <= 0`.
#[inline]
pub fn activate_grad(x: f64, spec: ActivationSpec) -> f64 {
    activate_with_grad(x, spec).1
}

/// Value and derivative in one pass.
#[inline]
pub fn activate_with_grad(x: f64, spec: ActivationSpec) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 0.0);
    }
    let mut y = x;
    let mut grad = 1.0;
    for _ in 0..spec.folds {
        grad /= 1.0 + y;
        y = y.ln_1p();
    }
    (y, grad)
}

//! Probabilistic load forecasting with a diffusion-perturbed sequence-to-sequence
//! model.
//!
//! The encoder's final hidden state is corrupted and then denoised by a learned
//! reverse process; the spread of decoded locations across repeated passes is
//! the epistemic uncertainty. A Cauchy (or Gaussian) emission head supplies the
//! aleatoric scale, and the two are combined through the stable-law addition
//! rule.

// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod distributions;
pub mod data;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod harness;
pub mod inference;
pub mod io;
pub mod metrics;
mod fastmath;
pub mod model;
pub mod nn;
pub mod plot;
pub mod rng;
pub mod training;

pub use error::{Error, Result};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point width the network runs in: `f32` for training and
/// inference, `f64` for gradient verification.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;

    fn f64(self) -> f64;

    /// `exp`, possibly through a faster approximation with relative error
    /// near the type's precision.
    fn fast_exp(self) -> Self {
        self.exp()
    }

    /// `ln(1 + u)` for `u` in `[0, 1]`, with the same latitude.
    fn fast_ln_1p_unit(self) -> Self {
        self.ln_1p()
    }
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn fast_exp(self) -> Self {
        fastmath::exp_f32(self)
    }

    #[inline(always)]
    fn fast_ln_1p_unit(self) -> Self {
        fastmath::ln_1p_unit_f32(self)
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

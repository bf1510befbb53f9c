//! Dense kernels with hand-written reverse-mode gradients.
//!
//! Every kernel is generic over [`Scalar`] so the same code runs in `f32`
//! for training and in `f64` for finite-difference checks.

mod dropout;
mod gradcheck;
mod layers;
mod lstm;
mod optim;
mod param;
mod rng;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use dropout::{apply_step_mask, dropout_mask, row_drop_mask, DropoutSpec};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use layers::{
    embedding_bwd, embedding_fwd, linear_bwd, linear_fwd, log_softmax_row, relu_bwd, relu_fwd, softmax_row,
    softmax_xent, softmax_xent_batch, LinearGrads,
};
pub use lstm::{
    lstm_cell_bwd, lstm_cell_fwd, lstm_layer_bwd, lstm_layer_fwd, CellCache, CellGrads, LayerCache, LayerGrads,
    LstmParams, LstmState,
};
pub use optim::{Adam, Optimizer, OptimizerKind, SgdMomentum};
pub use param::{clip_gradients, global_grad_norm, zero_grads, ParamSet, Parameter};
pub use rng::{stream, RngState};

/// Floating point element type for all kernels.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn sc<T: Scalar>(v: f64) -> T {
    T::from_f64_lossy(v)
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

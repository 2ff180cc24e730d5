use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis};

use super::{ParamLayout, Slot};
use crate::error::check_len;
use crate::{Real, Result};

/// `y = x W^T + b` applied row-wise to a batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Affine {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Slot,
    pub bias: Option<Slot>,
}

impl Affine {
    pub fn new(layout: &mut ParamLayout, name: &str, inputs: usize, outputs: usize, bias: bool) -> Self {
        let weight = layout.weight(format!("{name}.weight"), outputs, inputs);
        let bias = bias.then(|| layout.bias(format!("{name}.bias"), outputs));
        Affine {
            inputs,
            outputs,
            weight,
            bias,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.map_or(0, |b| b.len())
    }

    pub fn forward<T: Real>(&self, p: &[T], x: ArrayView2<T>) -> Array2<T> {
        debug_assert_eq!(x.ncols(), self.inputs);
        let mut y = x.dot(&self.weight.mat(p).t());
        if let Some(b) = self.bias {
            y += &b.vec(p);
        }
        y
    }

    pub fn try_forward<T: Real>(&self, p: &[T], x: ArrayView2<T>) -> Result<Array2<T>> {
        check_len("affine input", self.inputs, x.ncols())?;
        Ok(self.forward(p, x))
    }

    /// Accumulates parameter gradients into `g` and returns `dL/dx`.
    pub fn backward<T: Real>(&self, p: &[T], x: ArrayView2<T>, dy: ArrayView2<T>, g: &mut [T]) -> Array2<T> {
        self.accumulate(x, dy, g);
        dy.dot(&self.weight.mat(p))
    }

    /// Parameter gradients only.
    pub fn accumulate<T: Real>(&self, x: ArrayView2<T>, dy: ArrayView2<T>, g: &mut [T]) {
        general_mat_mul(T::one(), &dy.t(), &x, T::one(), &mut self.weight.mat_mut(g));
        if let Some(b) = self.bias {
            let mut gb = b.vec_mut(g);
            gb += &dy.sum_axis(Axis(0));
        }
    }
}

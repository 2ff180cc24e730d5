//! Differentiable building blocks with hand-written reverse passes.
//!
//! All trainable values of a network live in one flat buffer described by a
//! [`ParamLayout`]; layers hold [`Slot`]s into it. Gradients use a buffer of
//! the same layout, which keeps the optimizer, checkpointing and finite
//! difference checks layout-agnostic.

mod affine;
pub mod grad_check;
mod gru;
mod noise_net;

pub use affine::Affine;
pub use gru::{concat_layers, split_layers, stack_steps, GruCache, GruLayer, GruStack, StackTrace};
pub use noise_net::{step_embedding, NoiseNet, NoiseNetCache, STEP_EMBED_DIM};

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;

use crate::Real;

/// Location of one parameter array inside the flat buffer. Row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn slice<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.range()]
    }

    pub fn slice_mut<'a, T>(&self, p: &'a mut [T]) -> &'a mut [T] {
        &mut p[self.range()]
    }

    pub fn mat<'a, T>(&self, p: &'a [T]) -> ArrayView2<'a, T> {
        ArrayView2::from_shape((self.rows, self.cols), self.slice(p)).expect("slot shape")
    }

    pub fn mat_mut<'a, T>(&self, p: &'a mut [T]) -> ArrayViewMut2<'a, T> {
        ArrayViewMut2::from_shape((self.rows, self.cols), self.slice_mut(p)).expect("slot shape")
    }

    pub fn vec<'a, T>(&self, p: &'a [T]) -> ArrayView1<'a, T> {
        ArrayView1::from(self.slice(p))
    }

    pub fn vec_mut<'a, T>(&self, p: &'a mut [T]) -> ArrayViewMut1<'a, T> {
        ArrayViewMut1::from(self.slice_mut(p))
    }
}

/// Named entry of a [`ParamLayout`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub slot: Slot,
    /// Fan-in used for initialization; `None` marks a bias (zero-initialized).
    pub fan_in: Option<usize>,
}

impl ParamEntry {
    pub fn shape(&self) -> Vec<usize> {
        if self.slot.cols == 1 {
            vec![self.slot.rows]
        } else {
            vec![self.slot.rows, self.slot.cols]
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    len: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn weight(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Slot {
        self.push(name.into(), rows, cols, Some(cols))
    }

    pub fn bias(&mut self, name: impl Into<String>, len: usize) -> Slot {
        self.push(name.into(), len, 1, None)
    }

    fn push(&mut self, name: String, rows: usize, cols: usize, fan_in: Option<usize>) -> Slot {
        let slot = Slot {
            offset: self.len,
            rows,
            cols,
        };
        self.len += slot.len();
        self.entries.push(ParamEntry { name, slot, fan_in });
        slot
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn zeros<T: Real>(&self) -> Vec<T> {
        vec![T::zero(); self.len]
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
    pub fn init<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let mut p = self.zeros::<T>();
        for e in &self.entries {
            if let Some(fan_in) = e.fan_in {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                for v in e.slot.slice_mut(&mut p) {
                    *v = T::of(rng.random_range(-bound..bound));
                }
            }
        }
        p
    }
}

#[inline(always)]
pub fn sigmoid<T: Real>(x: T) -> T {
    // exp overflow yields 1/inf = 0, the correct limit.
    T::one() / (T::one() + (-x).fast_exp())
}

#[inline(always)]
pub fn tanh<T: Real>(x: T) -> T {
    let two = T::of(2.0);
    two * sigmoid(two * x) - T::one()
}

/// `log(1 + exp(x))` without overflow: `x` above 30, `exp(x)` below -30.
#[inline(always)]
pub fn softplus<T: Real>(x: T) -> T {
    let thirty = T::of(30.0);
    let e = (-x.abs()).fast_exp();
    let mid = x.max(T::zero()) + e.fast_ln_1p_unit();
    if x > thirty {
        x
    } else if x < -thirty {
        e
    } else {
        mid
    }
}

/// Derivative of [`softplus`].
#[inline(always)]
pub fn softplus_grad<T: Real>(x: T) -> T {
    sigmoid(x)
}

use ndarray::{s, Array2, ArrayView2};

use super::{softplus, softplus_grad, Affine, ParamLayout};
use crate::error::check_len;
use crate::{Real, Result};

pub const STEP_EMBED_DIM: usize = 32;
const TRUNK_WIDTH: usize = 64;

/// Sinusoidal encoding of a diffusion step: `[sin(n w_0), cos(n w_0), ...]`
/// with geometric frequencies `w_i = 10000^(-i/16)`.
pub fn step_embedding<T: Real>(n: usize) -> [T; STEP_EMBED_DIM] {
    let half = STEP_EMBED_DIM / 2;
    let mut out = [T::zero(); STEP_EMBED_DIM];
    for i in 0..half {
        let w = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let a = n as f64 * w;
        out[2 * i] = T::of(a.sin());
        out[2 * i + 1] = T::of(a.cos());
    }
    out
}

/// Step-conditioned noise predictor:
/// `[state, embed(n)] -> 64 -> softplus -> 64 -> softplus -> state_dim`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoiseNet {
    pub state_dim: usize,
    pub l1: Affine,
    pub l2: Affine,
    pub out: Affine,
}

#[derive(Clone, Debug)]
pub struct NoiseNetCache<T> {
    input: Array2<T>,
    a1: Array2<T>,
    h1: Array2<T>,
    a2: Array2<T>,
    h2: Array2<T>,
}

impl NoiseNet {
    pub fn new(layout: &mut ParamLayout, name: &str, state_dim: usize) -> Self {
        NoiseNet {
            state_dim,
            l1: Affine::new(layout, &format!("{name}.l1"), state_dim + STEP_EMBED_DIM, TRUNK_WIDTH, true),
            l2: Affine::new(layout, &format!("{name}.l2"), TRUNK_WIDTH, TRUNK_WIDTH, true),
            out: Affine::new(layout, &format!("{name}.out"), TRUNK_WIDTH, state_dim, true),
        }
    }

    pub fn param_count(&self) -> usize {
        self.l1.param_count() + self.l2.param_count() + self.out.param_count()
    }

    fn assemble<T: Real>(&self, x: ArrayView2<T>, steps: &[usize]) -> Array2<T> {
        let d = self.state_dim;
        let mut input = Array2::zeros((x.nrows(), d + STEP_EMBED_DIM));
        input.slice_mut(s![.., ..d]).assign(&x);
        for (b, &n) in steps.iter().enumerate() {
            let e = step_embedding::<T>(n);
            for (j, v) in e.into_iter().enumerate() {
                input[[b, d + j]] = v;
            }
        }
        input
    }

    /// Batched prediction; `steps[b]` is the diffusion step of row `b`.
    pub fn forward<T: Real>(&self, p: &[T], x: ArrayView2<T>, steps: &[usize]) -> (Array2<T>, NoiseNetCache<T>) {
        debug_assert_eq!(x.nrows(), steps.len());
        let input = self.assemble(x, steps);
        let a1 = self.l1.forward(p, input.view());
        let h1 = a1.mapv(softplus);
        let a2 = self.l2.forward(p, h1.view());
        let h2 = a2.mapv(softplus);
        let y = self.out.forward(p, h2.view());
        (y, NoiseNetCache { input, a1, h1, a2, h2 })
    }

    /// Prediction for every row at the same step, without a cache.
    pub fn predict<T: Real>(&self, p: &[T], x: ArrayView2<T>, n: usize) -> Array2<T> {
        let steps = vec![n; x.nrows()];
        let input = self.assemble(x, &steps);
        let h1 = self.l1.forward(p, input.view()).mapv(softplus);
        let h2 = self.l2.forward(p, h1.view()).mapv(softplus);
        self.out.forward(p, h2.view())
    }

    pub fn try_predict<T: Real>(&self, p: &[T], x: &[T], n: usize) -> Result<Vec<T>> {
        check_len("noise net state", self.state_dim, x.len())?;
        let x = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.predict(p, x, n).into_raw_vec_and_offset().0)
    }

    /// Accumulates parameter gradients and returns `dL/dstate`.
    pub fn backward<T: Real>(&self, p: &[T], cache: &NoiseNetCache<T>, dy: ArrayView2<T>, g: &mut [T]) -> Array2<T> {
        let mut dh2 = self.out.backward(p, cache.h2.view(), dy, g);
        dh2.zip_mut_with(&cache.a2, |d, &a| *d *= softplus_grad(a));
        let mut dh1 = self.l2.backward(p, cache.h1.view(), dh2.view(), g);
        dh1.zip_mut_with(&cache.a1, |d, &a| *d *= softplus_grad(a));
        let din = self.l1.backward(p, cache.input.view(), dh1.view(), g);
        din.slice(s![.., ..self.state_dim]).to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn net() -> (ParamLayout, NoiseNet) {
        let mut l = ParamLayout::new();
        let n = NoiseNet::new(&mut l, "eps", 6);
        (l, n)
    }

    #[test]
    fn param_count_for_default_state() {
        let mut l = ParamLayout::new();
        let n = NoiseNet::new(&mut l, "eps", 128);
        assert_eq!(n.param_count(), 160 * 64 + 64 + 64 * 64 + 64 + 64 * 128 + 128);
        assert_eq!(n.param_count(), 22_784);
    }

    #[test]
    fn zero_output_layer_gives_zero() {
        let (l, n) = net();
        let mut p: Vec<f64> = l.init(&mut stream(1, &[]));
        for v in n.out.weight.slice_mut(&mut p) {
            *v = 0.0;
        }
        let out = n.try_predict(&p, &[0.3, -1.0, 2.0, 0.0, 0.5, 0.1], 7).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn step_changes_output() {
        let (l, n) = net();
        let p: Vec<f64> = l.init(&mut stream(2, &[]));
        let x = [0.3, -1.0, 2.0, 0.0, 0.5, 0.1];
        let a = n.try_predict(&p, &x, 1).unwrap();
        let b = n.try_predict(&p, &x, 2).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, n.try_predict(&p, &x, 1).unwrap());
        assert!(n.try_predict(&p, &x[..5], 1).is_err());
    }

    #[test]
    fn embedding_is_bounded_and_distinct() {
        let e1 = step_embedding::<f64>(1);
        let e2 = step_embedding::<f64>(2);
        assert_eq!(e1.len(), STEP_EMBED_DIM);
        assert!(e1.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(e1, e2);
        assert_eq!(step_embedding::<f64>(0)[1], 1.0);
    }

    #[test]
    fn batched_rows_match_single_rows() {
        let (l, n) = net();
        let p: Vec<f64> = l.init(&mut stream(3, &[]));
        let x = Array2::from_shape_fn((3, 6), |(i, j)| (i as f64 + 1.0) * (j as f64 - 2.5) * 0.2);
        let steps = [1, 50, 100];
        let (y, _) = n.forward(&p, x.view(), &steps);
        for (b, &s) in steps.iter().enumerate() {
            let row = n.try_predict(&p, x.row(b).as_slice().unwrap(), s).unwrap();
            for (j, v) in row.iter().enumerate() {
                assert!((y[[b, j]] - v).abs() < 1e-12);
            }
        }
    }
}

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};

use super::{sigmoid, tanh, ParamLayout, Slot};
use crate::error::check_len;
use crate::{Real, Result};

/// Gated recurrent cell.
///
/// ```text
/// z  = sigmoid(W_z x + U_z h + b_z)
/// r  = sigmoid(W_r x + U_r h + b_r)
/// n  = tanh(W_n x + r * (U_n h + b_hn) + b_in)
/// h' = (1 - z) * n + z * h
/// ```
///
/// `w_ih` stacks `[W_z; W_r; W_n]`, `w_hh` stacks `[U_z; U_r; U_n]`, `b_ih`
/// is `[b_z; b_r; b_in]`.
///
/// Sequences are time-major row blocks: rows `t*B..(t+1)*B` hold step `t`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GruLayer {
    pub input: usize,
    pub hidden: usize,
    pub w_ih: Slot,
    pub w_hh: Slot,
    pub b_ih: Slot,
    pub b_hn: Slot,
}

/// Activations saved by a forward pass, all `T*B` rows.
#[derive(Clone, Debug)]
pub struct GruCache<T> {
    batch: usize,
    x: Array2<T>,
    /// State entering each step.
    h: Array2<T>,
    z: Array2<T>,
    r: Array2<T>,
    n: Array2<T>,
    /// `U_n h + b_hn`
    hn: Array2<T>,
}

impl<T> GruCache<T> {
    pub fn steps(&self) -> usize {
        self.x.nrows() / self.batch.max(1)
    }
}

impl GruLayer {
    pub fn new(layout: &mut ParamLayout, name: &str, input: usize, hidden: usize) -> Self {
        GruLayer {
            input,
            hidden,
            w_ih: layout.weight(format!("{name}.w_ih"), 3 * hidden, input),
            w_hh: layout.weight(format!("{name}.w_hh"), 3 * hidden, hidden),
            b_ih: layout.bias(format!("{name}.b_ih"), 3 * hidden),
            b_hn: layout.bias(format!("{name}.b_hn"), hidden),
        }
    }

    pub fn param_count(&self) -> usize {
        self.w_ih.len() + self.w_hh.len() + self.b_ih.len() + self.b_hn.len()
    }

    /// One step for a batch: `x` is `B x input`, `h` is `B x hidden`.
    pub fn forward<T: Real>(&self, p: &[T], x: ArrayView2<T>, h: ArrayView2<T>) -> (Array2<T>, GruCache<T>) {
        self.forward_seq(p, x, h)
    }

    pub fn try_forward<T: Real>(&self, p: &[T], x: ArrayView2<T>, h: ArrayView2<T>) -> Result<Array2<T>> {
        check_len("gru input", self.input, x.ncols())?;
        check_len("gru hidden", self.hidden, h.ncols())?;
        check_len("gru batch", x.nrows(), h.nrows())?;
        Ok(self.forward(p, x, h).0)
    }

    /// Whole sequence: `xs` is `T*B x input`, `h0` is `B x hidden`. Returns
    /// the state after every step (`T*B x hidden`).
    pub fn forward_seq<T: Real>(&self, p: &[T], xs: ArrayView2<T>, h0: ArrayView2<T>) -> (Array2<T>, GruCache<T>) {
        let hd = self.hidden;
        let batch = h0.nrows();
        let total = xs.nrows();
        debug_assert_eq!(total % batch.max(1), 0);
        let mut gi = xs.dot(&self.w_ih.mat(p).t());
        gi += &self.b_ih.vec(p);
        let w_hh = self.w_hh.mat(p);
        let b_hn = self.b_hn.slice(p);

        let mut hprev = Array2::zeros((total, hd));
        let mut z = Array2::zeros((total, hd));
        let mut r = Array2::zeros((total, hd));
        let mut n = Array2::zeros((total, hd));
        let mut hn = Array2::zeros((total, hd));
        let mut out = Array2::zeros((total, hd));
        let mut gh = Array2::zeros((batch, 3 * hd));
        let mut state = h0.as_standard_layout().into_owned();
        for t0 in (0..total).step_by(batch.max(1)) {
            let rows = t0..t0 + batch;
            general_mat_mul(T::one(), &state, &w_hh.t(), T::zero(), &mut gh);
            hprev.slice_mut(s![rows.clone(), ..]).assign(&state);
            for b in 0..batch {
                let i = t0 + b;
                let gi = gi.row(i);
                let gi = gi.as_slice().expect("standard layout");
                let gh = gh.row(b);
                let gh = gh.as_slice().expect("standard layout");
                let (gz, rest) = gi.split_at(hd);
                let (gr, gn) = rest.split_at(hd);
                let (uz, rest) = gh.split_at(hd);
                let (ur, un) = rest.split_at(hd);
                let mut zr = z.row_mut(i);
                let mut rr = r.row_mut(i);
                let mut nr = n.row_mut(i);
                let mut hr = hn.row_mut(i);
                let mut st = state.row_mut(b);
                for j in 0..hd {
                    let zj = sigmoid(gz[j] + uz[j]);
                    let rj = sigmoid(gr[j] + ur[j]);
                    let hnj = un[j] + b_hn[j];
                    let nj = tanh(gn[j] + rj * hnj);
                    zr[j] = zj;
                    rr[j] = rj;
                    hr[j] = hnj;
                    nr[j] = nj;
                    st[j] = (T::one() - zj) * nj + zj * st[j];
                }
            }
            out.slice_mut(s![rows, ..]).assign(&state);
        }
        let cache = GruCache {
            batch,
            x: xs.to_owned(),
            h: hprev,
            z,
            r,
            n,
            hn,
        };
        (out, cache)
    }

    /// Single-step reverse pass; see [`GruLayer::backward_seq`].
    pub fn backward<T: Real>(
        &self,
        p: &[T],
        cache: &GruCache<T>,
        dh_out: ArrayView2<T>,
        g: &mut [T],
        want_dx: bool,
    ) -> (Option<Array2<T>>, Array2<T>) {
        self.backward_seq(p, cache, dh_out, g, want_dx)
    }

    /// `d_out` is the gradient on every step's output (`T*B x hidden`),
    /// which already includes any gradient on the final state. Accumulates
    /// parameter gradients; returns `(dL/dxs, dL/dh0)`.
    pub fn backward_seq<T: Real>(
        &self,
        p: &[T],
        cache: &GruCache<T>,
        d_out: ArrayView2<T>,
        g: &mut [T],
        want_dx: bool,
    ) -> (Option<Array2<T>>, Array2<T>) {
        let hd = self.hidden;
        let batch = cache.batch;
        let total = d_out.nrows();
        let w_hh = self.w_hh.mat(p);
        let mut dgi = Array2::zeros((total, 3 * hd));
        let mut dgh = Array2::zeros((total, 3 * hd));
        let mut carry = Array2::<T>::zeros((batch, hd));
        for t0 in (0..total).step_by(batch.max(1)).rev() {
            for b in 0..batch {
                let i = t0 + b;
                let (z, r, n, hn, hp) = (
                    row(&cache.z, i),
                    row(&cache.r, i),
                    row(&cache.n, i),
                    row(&cache.hn, i),
                    row(&cache.h, i),
                );
                let dout = d_out.row(i);
                let dout = dout.as_slice().expect("standard layout");
                let mut dgi_row = dgi.row_mut(i);
                let dgi_row = dgi_row.as_slice_mut().expect("standard layout");
                let mut dgh_row = dgh.row_mut(i);
                let dgh_row = dgh_row.as_slice_mut().expect("standard layout");
                let mut carry_row = carry.row_mut(b);
                let carry_row = carry_row.as_slice_mut().expect("standard layout");
                let (daz_i, rest) = dgi_row.split_at_mut(hd);
                let (dar_i, dan_i) = rest.split_at_mut(hd);
                let (daz_h, rest) = dgh_row.split_at_mut(hd);
                let (dar_h, dan_h) = rest.split_at_mut(hd);
                for j in 0..hd {
                    let d = dout[j] + carry_row[j];
                    let (zj, rj, nj) = (z[j], r[j], n[j]);
                    let dz = d * (hp[j] - nj);
                    let dn = d * (T::one() - zj);
                    carry_row[j] = d * zj;
                    let dan = dn * (T::one() - nj * nj);
                    let daz = dz * zj * (T::one() - zj);
                    let dar = dan * hn[j] * rj * (T::one() - rj);
                    daz_i[j] = daz;
                    dar_i[j] = dar;
                    dan_i[j] = dan;
                    daz_h[j] = daz;
                    dar_h[j] = dar;
                    dan_h[j] = dan * rj;
                }
            }
            general_mat_mul(T::one(), &dgh.slice(s![t0..t0 + batch, ..]), &w_hh, T::one(), &mut carry);
            // Vanishing gradients turn subnormal, where arithmetic is slow.
            let tiny = T::min_positive_value() * T::of(1e6);
            carry.mapv_inplace(|v| if v.abs() < tiny { T::zero() } else { v });
        }
        general_mat_mul(T::one(), &dgi.t(), &cache.x, T::one(), &mut self.w_ih.mat_mut(g));
        general_mat_mul(T::one(), &dgh.t(), &cache.h, T::one(), &mut self.w_hh.mat_mut(g));
        {
            let mut gb = self.b_ih.vec_mut(g);
            gb += &dgi.sum_axis(Axis(0));
        }
        {
            let mut gb = self.b_hn.vec_mut(g);
            gb += &dgh.slice(s![.., 2 * hd..]).sum_axis(Axis(0));
        }
        let dx = want_dx.then(|| dgi.dot(&self.w_ih.mat(p)));
        (dx, carry)
    }
}

fn row<T>(a: &Array2<T>, i: usize) -> &[T] {
    let start = i * a.ncols();
    &a.as_slice().expect("standard layout")[start..start + a.ncols()]
}

/// Layered recurrent network; layer `l` consumes the output of layer `l - 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GruStack {
    pub layers: Vec<GruLayer>,
}

/// Per-layer caches from [`GruStack::forward_seq`].
#[derive(Clone, Debug)]
pub struct StackTrace<T> {
    caches: Vec<GruCache<T>>,
}

impl<T> StackTrace<T> {
    pub fn steps(&self) -> usize {
        self.caches.first().map_or(0, GruCache::steps)
    }
}

impl GruStack {
    pub fn new(layout: &mut ParamLayout, name: &str, input: usize, hidden: usize, layers: usize) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { hidden };
                GruLayer::new(layout, &format!("{name}.l{l}"), inp, hidden)
            })
            .collect();
        GruStack { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden
    }

    pub fn input(&self) -> usize {
        self.layers[0].input
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(GruLayer::param_count).sum()
    }

    /// One time step through every layer; `hidden` is updated in place and
    /// the top layer's new state is returned.
    pub fn step<T: Real>(&self, p: &[T], x: ArrayView2<T>, hidden: &mut [Array2<T>]) -> Array2<T> {
        let mut input = x.to_owned();
        for (layer, h) in self.layers.iter().zip(hidden.iter_mut()) {
            let (out, _) = layer.forward(p, input.view(), h.view());
            *h = out.clone();
            input = out;
        }
        input
    }

    /// Runs the whole sequence (`T*B x input`, time-major) layer by layer.
    /// `init[l]` is the initial state of layer `l`. Returns the top-layer
    /// output of every step, the final state of every layer, and the trace.
    pub fn forward_seq<T: Real>(
        &self,
        p: &[T],
        xs: ArrayView2<T>,
        init: &[Array2<T>],
    ) -> (Array2<T>, Vec<Array2<T>>, StackTrace<T>) {
        let batch = init[0].nrows();
        let total = xs.nrows();
        let mut finals = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut input = xs.to_owned();
        for (layer, h0) in self.layers.iter().zip(init) {
            let (out, cache) = layer.forward_seq(p, input.view(), h0.view());
            finals.push(out.slice(s![total - batch.., ..]).to_owned());
            caches.push(cache);
            input = out;
        }
        (input, finals, StackTrace { caches })
    }

    /// Backpropagation through time.
    ///
    /// `d_top` is the gradient on the top-layer outputs (`T*B x hidden`, if
    /// any) and `d_final[l]` the gradient on the final state of layer `l`.
    /// Returns the gradients on the initial states and, when `want_dx`, on
    /// the inputs.
    pub fn backward_seq<T: Real>(
        &self,
        p: &[T],
        trace: &StackTrace<T>,
        d_top: Option<ArrayView2<T>>,
        d_final: &[Array2<T>],
        g: &mut [T],
        want_dx: bool,
    ) -> (Vec<Array2<T>>, Option<Array2<T>>) {
        let top = self.layers.len() - 1;
        let cache = &trace.caches[top];
        let total = cache.x.nrows();
        let batch = cache.batch;
        let mut d_out = match d_top {
            Some(d) => d.to_owned(),
            None => Array2::zeros((total, self.layers[top].hidden)),
        };
        let mut d_init = vec![Array2::zeros((0, 0)); self.layers.len()];
        for l in (0..=top).rev() {
            {
                let mut last = d_out.slice_mut(s![total - batch.., ..]);
                last += &d_final[l];
            }
            let need_dx = l > 0 || want_dx;
            let (dx, dh0) = self.layers[l].backward_seq(p, &trace.caches[l], d_out.view(), g, need_dx);
            d_init[l] = dh0;
            match dx {
                Some(dx) if l > 0 => d_out = dx,
                dx => return (d_init, dx),
            }
        }
        unreachable!("layer 0 returns")
    }

    pub fn zero_state<T: Real>(&self, batch: usize) -> Vec<Array2<T>> {
        self.layers.iter().map(|l| Array2::zeros((batch, l.hidden))).collect()
    }
}

/// Concatenates per-layer states (`B x H` each) into `B x (L*H)`.
pub fn concat_layers<T: Real>(states: &[Array2<T>]) -> Array2<T> {
    let rows = states.first().map_or(0, |a| a.nrows());
    let width: usize = states.iter().map(|a| a.ncols()).sum();
    let mut out = Array2::zeros((rows, width));
    let mut col = 0;
    for a in states {
        out.slice_mut(s![.., col..col + a.ncols()]).assign(a);
        col += a.ncols();
    }
    out
}

/// Splits `B x (L*H)` back into per-layer states.
pub fn split_layers<T: Real>(flat: ArrayView2<T>, layers: usize) -> Vec<Array2<T>> {
    let h = flat.ncols() / layers;
    (0..layers)
        .map(|l| flat.slice(s![.., l * h..(l + 1) * h]).to_owned())
        .collect()
}

/// Stacks per-step `B x F` matrices into one time-major `T*B x F` matrix.
pub fn stack_steps<T: Real>(steps: &[Array2<T>]) -> Array2<T> {
    let views: Vec<_> = steps.iter().map(|a| a.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("equal widths").as_standard_layout().into_owned()
}

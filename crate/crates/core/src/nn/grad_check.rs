//! Finite-difference verification of the hand-written reverse passes.
//!
//! Each check builds a scalar objective `sum(c * y)` with fixed random
//! weights `c`, evaluates the analytic gradient with respect to parameters
//! and inputs, and compares it with central differences in `f64`.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::{softplus, softplus_grad, Affine, GruLayer, GruStack, NoiseNet, ParamLayout};
use crate::distributions::Family;
use crate::rng::{normal_vec, stream};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Central differences of `f` at `x`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-3)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

/// Compares the analytic gradient of `f` at `x` with central differences.
pub fn check(f: impl FnMut(&[f64]) -> f64, analytic: &[f64], x: &[f64]) -> f64 {
    max_relative_error(analytic, &central_difference(f, x, DEFAULT_STEP))
}

fn mat(v: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), v).expect("shape")
}

fn dot(a: &Array2<f64>, c: &[f64]) -> f64 {
    a.iter().zip(c).map(|(x, y)| x * y).sum()
}

/// Zero biases would hide errors in their gradients.
fn randomize_biases<R: Rng>(layout: &ParamLayout, point: &mut [f64], rng: &mut R) {
    for e in layout.entries().iter().filter(|e| e.fan_in.is_none()) {
        for v in e.slot.slice_mut(point) {
            *v = rng.random_range(-0.5..0.5);
        }
    }
}

/// Splits a packed variable vector into `(params, rest)`.
fn split(v: &[f64], n: usize) -> (&[f64], &[f64]) {
    v.split_at(n)
}

pub fn affine(seed: u64) -> f64 {
    let (inp, out, batch) = (5, 3, 4);
    let mut layout = ParamLayout::new();
    let a = Affine::new(&mut layout, "a", inp, out, true);
    let mut rng = stream(seed, &[1]);
    let mut point: Vec<f64> = layout.init(&mut rng);
    randomize_biases(&layout, &mut point, &mut rng);
    let np = point.len();
    point.extend(normal_vec::<f64, _>(&mut rng, batch * inp));
    let c: Vec<f64> = normal_vec(&mut rng, batch * out);

    let f = |v: &[f64]| {
        let (p, x) = split(v, np);
        dot(&a.forward(p, mat(x, batch, inp)), &c)
    };
    let (p, x) = split(&point, np);
    let mut g = vec![0.0; np];
    let dy = Array2::from_shape_vec((batch, out), c.clone()).unwrap();
    let dx = a.backward(p, mat(x, batch, inp), dy.view(), &mut g);
    g.extend(dx.iter());
    check(f, &g, &point)
}

pub fn softplus_fn(seed: u64) -> f64 {
    let mut rng = stream(seed, &[2]);
    let x: Vec<f64> = (0..8).map(|_| rng.random_range(-6.0..6.0)).collect();
    let analytic: Vec<f64> = x.iter().map(|&v| softplus_grad(v)).collect();
    check(|v| v.iter().map(|&t| softplus(t)).sum(), &analytic, &x)
}

pub fn gru_cell(seed: u64) -> f64 {
    let (inp, hid, batch) = (3, 4, 2);
    let mut layout = ParamLayout::new();
    let cell = GruLayer::new(&mut layout, "g", inp, hid);
    let mut rng = stream(seed, &[3]);
    let mut point: Vec<f64> = layout.init(&mut rng);
    randomize_biases(&layout, &mut point, &mut rng);
    let np = point.len();
    point.extend(normal_vec::<f64, _>(&mut rng, batch * inp));
    point.extend(normal_vec::<f64, _>(&mut rng, batch * hid).iter().map(|v| v * 0.5));
    let c: Vec<f64> = normal_vec(&mut rng, batch * hid);

    let f = |v: &[f64]| {
        let (p, rest) = split(v, np);
        let (x, h) = rest.split_at(batch * inp);
        dot(&cell.forward(p, mat(x, batch, inp), mat(h, batch, hid)).0, &c)
    };
    let (p, rest) = split(&point, np);
    let (x, h) = rest.split_at(batch * inp);
    let (_, cache) = cell.forward(p, mat(x, batch, inp), mat(h, batch, hid));
    let mut g = vec![0.0; np];
    let dy = Array2::from_shape_vec((batch, hid), c.clone()).unwrap();
    let (dx, dh) = cell.backward(p, &cache, dy.view(), &mut g, true);
    g.extend(dx.unwrap().iter());
    g.extend(dh.iter());
    check(f, &g, &point)
}

/// Whole-sequence BPTT through a two-layer stack, with loss terms on every
/// top-layer output and on both final states.
pub fn gru_stack(seed: u64) -> f64 {
    let (inp, hid, layers, steps, batch) = (3, 4, 2, 5, 2);
    let mut layout = ParamLayout::new();
    let stack = GruStack::new(&mut layout, "s", inp, hid, layers);
    let mut rng = stream(seed, &[4]);
    let mut point: Vec<f64> = layout.init(&mut rng);
    randomize_biases(&layout, &mut point, &mut rng);
    let np = point.len();
    let nx = steps * batch * inp;
    let nh = layers * batch * hid;
    point.extend(normal_vec::<f64, _>(&mut rng, nx));
    point.extend(normal_vec::<f64, _>(&mut rng, nh).iter().map(|v| v * 0.5));
    let c_top: Vec<f64> = normal_vec(&mut rng, steps * batch * hid);
    let c_fin: Vec<f64> = normal_vec(&mut rng, nh);

    let unpack = |v: &[f64]| {
        let xs = mat(&v[np..np + nx], steps * batch, inp).to_owned();
        let init: Vec<Array2<f64>> = (0..layers)
            .map(|l| {
                let o = np + nx + l * batch * hid;
                mat(&v[o..o + batch * hid], batch, hid).to_owned()
            })
            .collect();
        (xs, init)
    };
    let bh = batch * hid;
    let f = |v: &[f64]| {
        let (xs, init) = unpack(v);
        let (outs, finals, _) = stack.forward_seq(&v[..np], xs.view(), &init);
        let b: f64 = finals.iter().enumerate().map(|(l, o)| dot(o, &c_fin[l * bh..(l + 1) * bh])).sum();
        dot(&outs, &c_top) + b
    };

    let (xs, init) = unpack(&point);
    let p = &point[..np];
    let (_, _, trace) = stack.forward_seq(p, xs.view(), &init);
    let d_top = mat(&c_top, steps * batch, hid);
    let d_fin: Vec<Array2<f64>> =
        (0..layers).map(|l| mat(&c_fin[l * bh..(l + 1) * bh], batch, hid).to_owned()).collect();
    let mut g = vec![0.0; np];
    let (d_init, dx) = stack.backward_seq(p, &trace, Some(d_top), &d_fin, &mut g, true);
    g.extend(dx.unwrap().iter());
    for d in d_init {
        g.extend(d.iter());
    }
    check(f, &g, &point)
}

pub fn noise_net(seed: u64) -> f64 {
    let (dim, batch) = (6, 3);
    let mut layout = ParamLayout::new();
    let net = NoiseNet::new(&mut layout, "eps", dim);
    let mut rng = stream(seed, &[5]);
    let mut point: Vec<f64> = layout.init(&mut rng);
    randomize_biases(&layout, &mut point, &mut rng);
    let np = point.len();
    point.extend(normal_vec::<f64, _>(&mut rng, batch * dim));
    let steps: Vec<usize> = (0..batch).map(|_| rng.random_range(1..=100)).collect();
    let c: Vec<f64> = normal_vec(&mut rng, batch * dim);

    let f = |v: &[f64]| {
        let (p, x) = split(v, np);
        dot(&net.forward(p, mat(x, batch, dim), &steps).0, &c)
    };
    let (p, x) = split(&point, np);
    let (_, cache) = net.forward(p, mat(x, batch, dim), &steps);
    let mut g = vec![0.0; np];
    let dy = Array2::from_shape_vec((batch, dim), c.clone()).unwrap();
    let dx = net.backward(p, &cache, dy.view(), &mut g);
    g.extend(dx.iter());
    check(f, &g, &point)
}

/// Negative log-likelihood of an emission with softplus scale, differentiated
/// with respect to `(loc, raw_scale)`.
pub fn emission(seed: u64, family: Family) -> f64 {
    let mut rng = stream(seed, &[6, family.alpha() as u64]);
    let n = 6;
    let y: Vec<f64> = normal_vec(&mut rng, n);
    let mut point: Vec<f64> = normal_vec(&mut rng, n);
    point.extend((0..n).map(|_| rng.random_range(-2.0..2.0)));
    let f = |v: &[f64]| (0..n).map(|i| family.nll(y[i], v[i], softplus(v[n + i]))).sum();
    let mut g = vec![0.0; 2 * n];
    for i in 0..n {
        let (dl, ds) = family.nll_grad(y[i], point[i], softplus(point[n + i]));
        g[i] = dl;
        g[n + i] = ds * softplus_grad(point[n + i]);
    }
    check(f, &g, &point)
}

pub type PrimitiveCheck = (&'static str, fn(u64) -> f64);

/// Every trainable primitive with its check.
pub const PRIMITIVES: [PrimitiveCheck; 7] = [
    ("affine", affine),
    ("softplus", softplus_fn),
    ("gru_cell", gru_cell),
    ("gru_stack", gru_stack),
    ("noise_net", noise_net),
    ("cauchy_emission", |s| emission(s, Family::Cauchy)),
    ("gaussian_emission", |s| emission(s, Family::Gaussian)),
];

/// Worst error per primitive over `points` seeded points.
pub fn run_all(seed: u64, points: u64) -> Vec<(&'static str, f64)> {
    PRIMITIVES
        .iter()
        .map(|(name, f)| (*name, (0..points).map(|k| f(seed.wrapping_add(k))).fold(0.0, f64::max)))
        .collect()
}

//! Reference oracles written independently of the main implementations,
//! and a registry that runs them against the crate.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy as CauchyDist, Distribution, Normal as NormalDist};
use statrs::distribution::{Cauchy, Continuous, ContinuousCDF, Normal};

use crate::distributions::{self, Family, StableParams};
use crate::metrics::{self, QuantileGrid};
use crate::{Error, Result};

/// Flat parameters of one gated recurrent cell, row-major, gates ordered
/// update, reset, candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct GruScalarParams {
    pub input: usize,
    pub hidden: usize,
    /// `3H x I`
    pub w_ih: Vec<f64>,
    /// `3H x H`
    pub w_hh: Vec<f64>,
    /// `3H`
    pub b_ih: Vec<f64>,
    /// `H`
    pub b_hn: Vec<f64>,
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One cell step evaluated with explicit loops.
#[allow(clippy::needless_range_loop)]
pub fn oracle_gru_scalar(x: &[f64], h: &[f64], p: &GruScalarParams) -> Vec<f64> {
    let (ni, nh) = (p.input, p.hidden);
    assert_eq!(x.len(), ni);
    assert_eq!(h.len(), nh);
    let mut out = vec![0.0; nh];
    for j in 0..nh {
        let mut a = [0.0f64; 3];
        let mut u = [0.0f64; 3];
        for (g, (ag, ug)) in a.iter_mut().zip(u.iter_mut()).enumerate() {
            let row = g * nh + j;
            *ag = p.b_ih[row];
            for k in 0..ni {
                *ag += p.w_ih[row * ni + k] * x[k];
            }
            for k in 0..nh {
                *ug += p.w_hh[row * nh + k] * h[k];
            }
        }
        let z = logistic(a[0] + u[0]);
        let r = logistic(a[1] + u[1]);
        let n = (a[2] + r * (u[2] + p.b_hn[j])).tanh();
        out[j] = (1.0 - z) * n + z * h[j];
    }
    out
}

/// `scale * (z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi))` with `z = (y - loc)/scale`.
pub fn oracle_gaussian_crps(y: f64, loc: f64, scale: f64) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::domain(format!("scale must be positive, got {scale}")));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    let z = (y - loc) / scale;
    Ok(scale * (z * (2.0 * n.cdf(z) - 1.0) + 2.0 * n.pdf(z) - 1.0 / std::f64::consts::PI.sqrt()))
}

/// Kolmogorov-Smirnov distance between `samples` and `cdf`.
pub fn ks_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// KS distance between simulated sums `X1 + X2` and the law predicted by
/// `combine_scales`.
pub fn oracle_stable_sum_with(
    p1: &StableParams,
    p2: &StableParams,
    draws: usize,
    seed: u64,
    combine: fn(f64, f64, f64) -> Result<f64>,
) -> Result<f64> {
    if p1.family != p2.family {
        return Err(Error::domain("summands must share a family"));
    }
    if draws < 100_000 {
        return Err(Error::domain(format!("at least 1e5 draws required, got {draws}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums: Vec<f64> = match p1.family {
        Family::Cauchy => {
            let a = CauchyDist::new(p1.loc, p1.scale).map_err(|e| Error::domain(e.to_string()))?;
            let b = CauchyDist::new(p2.loc, p2.scale).map_err(|e| Error::domain(e.to_string()))?;
            (0..draws).map(|_| a.sample(&mut rng) + b.sample(&mut rng)).collect()
        }
        Family::Gaussian => {
            let a = NormalDist::new(p1.loc, p1.scale).map_err(|e| Error::domain(e.to_string()))?;
            let b = NormalDist::new(p2.loc, p2.scale).map_err(|e| Error::domain(e.to_string()))?;
            (0..draws).map(|_| a.sample(&mut rng) + b.sample(&mut rng)).collect()
        }
    };
    let scale = combine(p1.family.alpha(), p1.scale, p2.scale)?;
    let loc = p1.loc + p2.loc;
    let d = match p1.family {
        Family::Cauchy => {
            let law = Cauchy::new(loc, scale).map_err(|e| Error::domain(e.to_string()))?;
            ks_distance(&mut sums, |x| law.cdf(x))
        }
        Family::Gaussian => {
            let law = Normal::new(loc, scale).map_err(|e| Error::domain(e.to_string()))?;
            ks_distance(&mut sums, |x| law.cdf(x))
        }
    };
    Ok(d)
}

pub fn oracle_stable_sum(p1: &StableParams, p2: &StableParams, draws: usize, seed: u64) -> Result<f64> {
    oracle_stable_sum_with(p1, p2, draws, seed, distributions::combine_scales)
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; NaN when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    crate::error::check_len("spearman inputs", x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::data("spearman needs at least two points"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub samples: u64,
    pub seed: u64,
}

impl OracleReport {
    pub fn new(name: impl Into<String>, max_error: f64, tolerance: f64, samples: u64, seed: u64) -> Self {
        OracleReport {
            name: name.into(),
            max_error,
            tolerance,
            pass: max_error <= tolerance,
            samples,
            seed,
        }
    }
}

pub fn write_oracle_report<W: Write>(w: W, reports: &[OracleReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["check", "max_error", "tolerance", "pass", "samples", "seed"])?;
    for r in reports {
        out.write_record([
            r.name.clone(),
            format!("{:e}", r.max_error),
            format!("{:e}", r.tolerance),
            r.pass.to_string(),
            r.samples.to_string(),
            r.seed.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Implementations under test; replaceable for fault injection.
#[derive(Clone, Copy)]
pub struct Subjects {
    pub cauchy_nll: fn(f64, f64, f64) -> Result<f64>,
    pub gaussian_nll: fn(f64, f64, f64) -> Result<f64>,
    pub combine_scales: fn(f64, f64, f64) -> Result<f64>,
    pub robustness_ratio: fn(f64, f64) -> Result<f64>,
    pub crps_quantile: fn(f64, &StableParams, &QuantileGrid) -> f64,
    pub stable_quantile: fn(f64, &StableParams) -> Result<f64>,
}

impl Default for Subjects {
    fn default() -> Self {
        Subjects {
            cauchy_nll: distributions::cauchy_nll,
            gaussian_nll: distributions::gaussian_nll,
            combine_scales: distributions::combine_scales,
            robustness_ratio: distributions::robustness_ratio,
            crps_quantile: metrics::crps_quantile,
            stable_quantile: distributions::stable_quantile,
        }
    }
}

fn gru_against_cell(seed: u64) -> f64 {
    use crate::nn::{GruLayer, ParamLayout};
    use crate::rng::{normal_vec, stream};
    use ndarray::ArrayView2;
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let mut rng = stream(seed, &[case]);
        let (ni, nh) = (1 + (case % 4) as usize, 1 + (case % 5) as usize);
        let mut layout = ParamLayout::new();
        let cell = GruLayer::new(&mut layout, "g", ni, nh);
        let p: Vec<f64> = normal_vec(&mut rng, layout.len());
        let x: Vec<f64> = normal_vec(&mut rng, ni);
        let h: Vec<f64> = normal_vec(&mut rng, nh);
        let main = cell.forward(&p, ArrayView2::from_shape((1, ni), &x).unwrap(), ArrayView2::from_shape((1, nh), &h).unwrap()).0;
        let params = GruScalarParams {
            input: ni,
            hidden: nh,
            w_ih: cell.w_ih.slice(&p).to_vec(),
            w_hh: cell.w_hh.slice(&p).to_vec(),
            b_ih: cell.b_ih.slice(&p).to_vec(),
            b_hn: cell.b_hn.slice(&p).to_vec(),
        };
        let oracle = oracle_gru_scalar(&x, &h, &params);
        for (a, b) in main.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

fn nll_against_densities(s: &Subjects) -> (f64, f64) {
    let ln_pi = std::f64::consts::PI.ln();
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut worst_c = 0.0f64;
    let mut worst_g = 0.0f64;
    for i in 0..20 {
        for j in 1..=10 {
            let (y, loc, scale) = (-3.0 + 0.3 * i as f64, 0.25, 0.2 * j as f64);
            let c = Cauchy::new(loc, scale).unwrap();
            let g = Normal::new(loc, scale).unwrap();
            let ours_c = (s.cauchy_nll)(y, loc, scale).unwrap_or(f64::NAN);
            let ours_g = (s.gaussian_nll)(y, loc, scale).unwrap_or(f64::NAN);
            worst_c = worst_c.max((ours_c - (-c.ln_pdf(y) - ln_pi)).abs());
            worst_g = worst_g.max((ours_g - (-g.ln_pdf(y) - half_ln_2pi)).abs());
        }
    }
    (if worst_c.is_nan() { f64::INFINITY } else { worst_c }, if worst_g.is_nan() { f64::INFINITY } else { worst_g })
}

fn denoise_round_trip() -> f64 {
    use crate::diffusion::{denoise_deterministic, q_sample, NoiseSchedule};
    let sched = NoiseSchedule::default();
    let h0 = vec![0.7, -1.3, 0.05, 2.2, -0.4, 1.0];
    let start = q_sample(&h0, sched.steps(), &vec![0.0; h0.len()], &sched).expect("lengths match");
    let s2 = sched.clone();
    let clean = h0.clone();
    let exact = move |x: &[f64], n: usize| {
        let ab = s2.alpha_bar(n);
        x.iter().zip(&clean).map(|(x, h)| (x - ab.sqrt() * h) / (1.0 - ab).sqrt()).collect()
    };
    let out = denoise_deterministic(&start, exact, &sched);
    out.iter().zip(&h0).map(|(o, v)| ((o - v) / v).abs()).fold(0.0, f64::max)
}

fn robustness_bound(s: &Subjects) -> (f64, f64) {
    let mut excess = 0.0f64;
    let mut at_scale = 0.0f64;
    for i in 0..100 {
        let scale = 0.05 + 0.1 * i as f64;
        for j in 0..100 {
            let r = scale * (1.0 + 0.2 * j as f64);
            for sign in [1.0, -1.0] {
                let v = (s.robustness_ratio)(sign * r, scale).unwrap_or(f64::INFINITY);
                excess = excess.max(v - 1.0);
            }
        }
        at_scale = at_scale.max(((s.robustness_ratio)(scale, scale).unwrap_or(f64::INFINITY) - 1.0).abs());
    }
    (excess.max(0.0), at_scale)
}

fn crps_fidelity(s: &Subjects) -> f64 {
    let grid = QuantileGrid::default();
    let p = StableParams::gaussian(0.0, 1.0).expect("valid");
    [0.0, 0.5, 1.0, 2.0]
        .iter()
        .map(|&z| {
            let exact = oracle_gaussian_crps(z, 0.0, 1.0).expect("valid scale");
            (((s.crps_quantile)(z, &p, &grid) - exact) / exact).abs()
        })
        .fold(0.0, f64::max)
}

/// `(|coverage - 0.75|, crps_true - min(crps_alternatives))` for outcomes
/// drawn from the predictive law itself.
pub fn calibration(s: &Subjects, seed: u64, draws: usize) -> (f64, f64) {
    let (mu, sigma) = (2.0, 1.5);
    let law = StableParams::cauchy(mu, sigma).expect("valid");
    let shifted = StableParams::cauchy(mu + 0.5 * sigma, sigma).expect("valid");
    let wide = StableParams::cauchy(mu, 2.0 * sigma).expect("valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = CauchyDist::new(mu, sigma).expect("valid");
    let ys: Vec<f64> = (0..draws).map(|_| dist.sample(&mut rng)).collect();
    let lo = (s.stable_quantile)(0.125, &law).unwrap_or(f64::NAN);
    let hi = (s.stable_quantile)(0.875, &law).unwrap_or(f64::NAN);
    let inside = ys.iter().filter(|y| lo <= **y && **y <= hi).count() as f64 / draws as f64;
    let grid = QuantileGrid::default();
    let mean = |p: &StableParams| ys.iter().map(|y| (s.crps_quantile)(*y, p, &grid)).sum::<f64>() / draws as f64;
    let gap = mean(&law) - mean(&shifted).min(mean(&wide));
    let cov_err = (inside - 0.75).abs();
    (if cov_err.is_nan() { f64::INFINITY } else { cov_err }, gap)
}

/// Every registered check against the given implementations.
pub fn run_oracles_with(seed: u64, s: &Subjects) -> Vec<OracleReport> {
    let mut out = Vec::new();
    for (name, err) in crate::nn::grad_check::run_all(seed, 10) {
        out.push(OracleReport::new(format!("grad_check.{name}"), err, 1e-4, 10, seed));
    }
    out.push(OracleReport::new("gru_cell_vs_scalar_oracle", gru_against_cell(seed), 1e-10, 100, seed));
    let (c, g) = nll_against_densities(s);
    out.push(OracleReport::new("cauchy_nll_vs_density", c, 1e-12, 200, seed));
    out.push(OracleReport::new("gaussian_nll_vs_density", g, 1e-12, 200, seed));
    out.push(OracleReport::new("denoise_round_trip_n100", denoise_round_trip(), 1e-5, 6, seed));
    for (name, p1, p2) in [
        ("stable_sum_cauchy_1_2", StableParams::cauchy(0.0, 1.0), StableParams::cauchy(0.0, 2.0)),
        ("stable_sum_gaussian_3_4", StableParams::gaussian(0.0, 3.0), StableParams::gaussian(0.0, 4.0)),
    ] {
        let d = oracle_stable_sum_with(&p1.expect("valid"), &p2.expect("valid"), 200_000, seed, s.combine_scales)
            .unwrap_or(f64::INFINITY);
        out.push(OracleReport::new(name, d, 0.01, 200_000, seed));
    }
    let (excess, at_scale) = robustness_bound(s);
    out.push(OracleReport::new("robustness_ratio_bound", excess, 0.0, 20_000, seed));
    out.push(OracleReport::new("robustness_ratio_equality", at_scale, 1e-12, 100, seed));
    out.push(OracleReport::new("crps_gaussian_fidelity", crps_fidelity(s), 0.01, 4, seed));
    let (cov, gap) = calibration(s, seed, 10_000);
    out.push(OracleReport::new("cauchy_calibration_coverage75", cov, 0.03, 10_000, seed));
    out.push(OracleReport::new("cauchy_crps_propriety", gap, 0.0, 10_000, seed));
    let rho = spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 3.0, 1.0]).unwrap_or(f64::NAN);
    let expect = -0.9486832980505138;
    out.push(OracleReport::new("spearman_with_ties", (rho - expect).abs(), 1e-12, 4, seed));
    out
}

pub fn run_all_oracles(seed: u64) -> Vec<OracleReport> {
    run_oracles_with(seed, &Subjects::default())
}

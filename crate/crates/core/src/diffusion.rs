//! Forward corruption and learned reverse denoising of encoder hidden states.
//!
//! Step indices are 1-based throughout, matching the schedule convention:
//! `alpha_bar(0) == 1` and `beta_tilde(1) == 0`.

use rand::Rng;

use crate::error::check_len;
use crate::rng::normal_vec;
use crate::{Error, Real, Result};

/// Linear variance schedule and the constants derived from it.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

/// Builds a schedule with `beta` linearly interpolated from `beta_start` to
/// `beta_end` inclusive.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::config("diffusion steps must be at least 1"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::config(format!(
            "noise schedule needs 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
        )));
    }
    let beta: Vec<f64> = if steps == 1 {
        vec![beta_start]
    } else {
        (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect()
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    let beta_tilde = (0..steps)
        .map(|i| {
            let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
            (1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]
        })
        .collect();
    Ok(NoiseSchedule {
        beta,
        alpha,
        alpha_bar,
        beta_tilde,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, n: usize) -> f64 {
        self.beta[n - 1]
    }

    pub fn alpha(&self, n: usize) -> f64 {
        self.alpha[n - 1]
    }

    /// Cumulative product of `alpha` up to step `n`; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, n: usize) -> f64 {
        if n == 0 {
            1.0
        } else {
            self.alpha_bar[n - 1]
        }
    }

    pub fn beta_tilde(&self, n: usize) -> f64 {
        self.beta_tilde[n - 1]
    }

    /// Coefficients `(c_state, c_clean)` of the forward-process posterior mean,
    /// `mu = c_state * h_n + c_clean * h_0`.
    pub fn posterior_coefficients(&self, n: usize) -> (f64, f64) {
        let ab = self.alpha_bar(n);
        let ab_prev = self.alpha_bar(n - 1);
        (
            self.alpha(n).sqrt() * (1.0 - ab_prev) / (1.0 - ab),
            ab_prev.sqrt() * self.beta(n) / (1.0 - ab),
        )
    }

    fn check_step(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.steps() {
            Err(Error::Contract(format!(
                "diffusion step {n} outside 1..={}",
                self.steps()
            )))
        } else {
            Ok(())
        }
    }
}

/// `sqrt(alpha_bar_n) h0 + sqrt(1 - alpha_bar_n) eps`.
pub fn q_sample<T: Real>(h0: &[T], n: usize, eps: &[T], sched: &NoiseSchedule) -> Result<Vec<T>> {
    sched.check_step(n)?;
    check_len("q_sample noise", h0.len(), eps.len())?;
    let ab = sched.alpha_bar(n);
    let (a, b) = (T::of(ab.sqrt()), T::of((1.0 - ab).sqrt()));
    Ok(h0.iter().zip(eps).map(|(&h, &e)| a * h + b * e).collect())
}

/// Mean of `q(h_{n-1} | h_n, h_0)`, defined for `2 <= n <= N`.
pub fn posterior_mean<T: Real>(
    h_n: &[T],
    h0: &[T],
    n: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<T>> {
    sched.check_step(n)?;
    if n < 2 {
        return Err(Error::Contract(
            "posterior mean is degenerate at step 1".into(),
        ));
    }
    check_len("posterior_mean", h_n.len(), h0.len())?;
    let (cs, c0) = sched.posterior_coefficients(n);
    let (cs, c0) = (T::of(cs), T::of(c0));
    Ok(h_n.iter().zip(h0).map(|(&x, &c)| cs * x + c0 * c).collect())
}

/// Simplified noise-prediction objective for one draw of `(n, eps)`:
/// `|eps - eps_theta(q_sample(h0, n, eps), n)|^2`.
pub fn elbo_loss<T, F, R>(h0: &[T], eps_theta: F, sched: &NoiseSchedule, rng: &mut R) -> Result<T>
where
    T: Real,
    F: Fn(&[T], usize) -> Vec<T>,
    R: Rng + ?Sized,
{
    let n = rng.random_range(1..=sched.steps());
    let eps: Vec<T> = normal_vec(rng, h0.len());
    let noisy = q_sample(h0, n, &eps, sched)?;
    let pred = eps_theta(&noisy, n);
    check_len("noise prediction", eps.len(), pred.len())?;
    Ok(eps.iter().zip(&pred).map(|(&e, &p)| (e - p) * (e - p)).sum())
}

/// One ancestral sampling step from `h_n` to `h_{n-1}`, where `predicted_noise`
/// is the denoiser output at `(h_n, n)` and `z` the injected noise (`None`
/// means zero).
pub fn reverse_step_with<T: Real>(
    h_n: &mut [T],
    n: usize,
    predicted_noise: &[T],
    z: Option<&[T]>,
    sched: &NoiseSchedule,
) {
    let inv_sqrt_alpha = T::of(1.0 / sched.alpha(n).sqrt());
    let coef = T::of(sched.beta(n) / (1.0 - sched.alpha_bar(n)).sqrt());
    let sigma = T::of(sched.beta_tilde(n).sqrt());
    match z {
        Some(z) => {
            for ((h, &e), &z) in h_n.iter_mut().zip(predicted_noise).zip(z) {
                *h = inv_sqrt_alpha * (*h - coef * e) + sigma * z;
            }
        }
        None => {
            for (h, &e) in h_n.iter_mut().zip(predicted_noise) {
                *h = inv_sqrt_alpha * (*h - coef * e);
            }
        }
    }
}

/// Checked single reverse step. `z` must be zero at `n == 1`.
pub fn reverse_step<T, F>(
    h_n: &[T],
    n: usize,
    eps_theta: F,
    z: &[T],
    sched: &NoiseSchedule,
) -> Result<Vec<T>>
where
    T: Real,
    F: Fn(&[T], usize) -> Vec<T>,
{
    sched.check_step(n)?;
    check_len("reverse_step noise", h_n.len(), z.len())?;
    if n == 1 && z.iter().any(|v| *v != T::zero()) {
        return Err(Error::Contract(
            "the final reverse step must not inject noise".into(),
        ));
    }
    let pred = eps_theta(h_n, n);
    check_len("noise prediction", h_n.len(), pred.len())?;
    let mut out = h_n.to_vec();
    reverse_step_with(&mut out, n, &pred, Some(z), sched);
    Ok(out)
}

/// Runs the reverse chain from step `N` down to 1, drawing fresh noise for
/// every step above 1.
pub fn denoise<T, F, R>(h_n: &[T], eps_theta: F, sched: &NoiseSchedule, rng: &mut R) -> Vec<T>
where
    T: Real,
    F: Fn(&[T], usize) -> Vec<T>,
    R: Rng + ?Sized,
{
    let mut h = h_n.to_vec();
    for n in (1..=sched.steps()).rev() {
        let pred = eps_theta(&h, n);
        if n > 1 {
            let z: Vec<T> = normal_vec(rng, h.len());
            reverse_step_with(&mut h, n, &pred, Some(&z), sched);
        } else {
            reverse_step_with(&mut h, n, &pred, None, sched);
        }
    }
    h
}

/// Reverse chain with all injected noise fixed at zero.
pub fn denoise_deterministic<T, F>(h_n: &[T], eps_theta: F, sched: &NoiseSchedule) -> Vec<T>
where
    T: Real,
    F: Fn(&[T], usize) -> Vec<T>,
{
    let mut h = h_n.to_vec();
    for n in (1..=sched.steps()).rev() {
        let pred = eps_theta(&h, n);
        reverse_step_with(&mut h, n, &pred, None, sched);
    }
    h
}

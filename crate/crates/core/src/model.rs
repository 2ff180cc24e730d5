//! Encoder, hidden-state diffusion, decoder and emission heads.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{make_schedule, reverse_step_with, NoiseSchedule};
use crate::distributions::Family;
use crate::nn::{concat_layers, softplus, softplus_grad, split_layers, Affine, GruStack, NoiseNet, ParamLayout};
use crate::rng::normal_vec;
use crate::{Error, Real, Result};

/// Ablation variants: `o/o` has no diffusion and a Gaussian head, `d/o`
/// diffuses with a Gaussian head, `d/c` diffuses with a Cauchy head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    OO,
    DO,
    DC,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::OO, Variant::DO, Variant::DC];

    pub fn family(self) -> Family {
        match self {
            Variant::DC => Family::Cauchy,
            Variant::OO | Variant::DO => Family::Gaussian,
        }
    }

    pub fn diffused(self) -> bool {
        self != Variant::OO
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::OO => "o/o",
            Variant::DO => "d/o",
            Variant::DC => "d/c",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "o/o" | "oo" => Ok(Variant::OO),
            "d/o" | "do" => Ok(Variant::DO),
            "d/c" | "dc" => Ok(Variant::DC),
            _ => Err(Error::config(format!("unknown variant {s:?} (expected o/o, d/o or d/c)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Features per time step, shared by encoder and decoder inputs.
    pub input_dim: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub layers: usize,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Weight of the diffusion term in the loss.
    pub lambda: f64,
    /// Route the diffusion-loss gradient into the encoder as well as the
    /// denoiser.
    pub elbo_to_encoder: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::DC,
            input_dim: 7,
            horizon: 24,
            hidden: 64,
            layers: 2,
            steps: crate::diffusion::DEFAULT_STEPS,
            beta_start: crate::diffusion::DEFAULT_BETA_START,
            beta_end: crate::diffusion::DEFAULT_BETA_END,
            lambda: 1.0,
            elbo_to_encoder: true,
        }
    }
}

impl ModelConfig {
    pub fn state_dim(&self) -> usize {
        self.hidden * self.layers
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("horizon", self.horizon),
            ("hidden", self.hidden),
            ("layers", self.layers),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.variant.diffused() {
            make_schedule(self.steps, self.beta_start, self.beta_end)?;
        }
        Ok(())
    }
}

/// One mini-batch of `B` windows. Sequences are time-major: rows
/// `t*B..(t+1)*B` hold step `t`.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    /// `L_in*B x F` encoder inputs.
    pub enc: Array2<T>,
    /// `H*B x F` decoder inputs; column 0 carries the previous load value.
    pub dec: Array2<T>,
    /// `B x H` standardized labels.
    pub target: Array2<T>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.target.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cast<U: Real>(&self) -> Batch<U> {
        let c = |a: &Array2<T>| a.mapv(|v| U::of(v.f64()));
        Batch {
            enc: c(&self.enc),
            dec: c(&self.dec),
            target: c(&self.target),
        }
    }
}

/// Per-step emission parameters for a batch, `B x H` each.
#[derive(Clone, Debug, PartialEq)]
pub struct Emission<T> {
    pub loc: Array2<T>,
    pub scale: Array2<T>,
}

/// Loss components summed over the windows of a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub elbo: f64,
    pub nll: f64,
}

impl LossParts {
    pub fn total(&self, lambda: f64) -> f64 {
        lambda * self.elbo + self.nll
    }
}

/// Architecture without parameter values; every method takes the flat
/// parameter buffer explicitly.
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub encoder: GruStack,
    pub decoder: GruStack,
    pub head_loc: Affine,
    pub head_scale: Affine,
    pub noise: Option<NoiseNet>,
    pub schedule: Option<NoiseSchedule>,
}

impl Network {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut layout = ParamLayout::new();
        let encoder = GruStack::new(&mut layout, "encoder", config.input_dim, config.hidden, config.layers);
        let decoder = GruStack::new(&mut layout, "decoder", config.input_dim, config.hidden, config.layers);
        let head_loc = Affine::new(&mut layout, "head_loc", config.hidden, 1, true);
        let head_scale = Affine::new(&mut layout, "head_scale", config.hidden, 1, true);
        let (noise, schedule) = if config.variant.diffused() {
            (
                Some(NoiseNet::new(&mut layout, "reverse", config.state_dim())),
                Some(make_schedule(config.steps, config.beta_start, config.beta_end)?),
            )
        } else {
            (None, None)
        };
        Ok(Network {
            config,
            layout,
            encoder,
            decoder,
            head_loc,
            head_scale,
            noise,
            schedule,
        })
    }

    pub fn count_parameters(&self) -> usize {
        self.layout.len()
    }

    pub fn family(&self) -> Family {
        self.config.variant.family()
    }

    pub fn init_params<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        self.layout.init(rng)
    }

    fn check_batch<T: Real>(&self, rows: usize, enc: ArrayView2<T>, dec: ArrayView2<T>) -> Result<()> {
        if rows == 0 || enc.nrows() == 0 || !enc.nrows().is_multiple_of(rows) {
            return Err(Error::Shape {
                context: "encoder rows",
                expected: rows.max(1),
                got: enc.nrows(),
            });
        }
        crate::error::check_len("decoder rows", self.config.horizon * rows, dec.nrows())?;
        crate::error::check_len("encoder feature dim", self.config.input_dim, enc.ncols())?;
        crate::error::check_len("decoder feature dim", self.config.input_dim, dec.ncols())?;
        Ok(())
    }

    /// Final states of all encoder layers, concatenated: `B x (layers*hidden)`.
    pub fn encode<T: Real>(&self, p: &[T], enc: ArrayView2<T>, rows: usize) -> Array2<T> {
        let (_, finals, _) = self.encoder.forward_seq(p, enc, &self.encoder.zero_state(rows));
        concat_layers(&finals)
    }

    pub fn try_encode<T: Real>(&self, p: &[T], enc: ArrayView2<T>, rows: usize) -> Result<Array2<T>> {
        let dec = Array2::zeros((self.config.horizon * rows, self.config.input_dim));
        self.check_batch(rows, enc, dec.view())?;
        Ok(self.encode(p, enc, rows))
    }

    /// Decoder with the given inputs at every step (teacher forcing).
    pub fn decode<T: Real>(&self, p: &[T], h_star: ArrayView2<T>, dec: ArrayView2<T>) -> Emission<T> {
        let rows = h_star.nrows();
        let (outs, _, _) = self.decoder.forward_seq(p, dec, &split_layers(h_star, self.config.layers));
        let loc = self.head_loc.forward(p, outs.view());
        let raw = self.head_scale.forward(p, outs.view());
        Emission {
            loc: to_batch_major(loc.view(), rows),
            scale: to_batch_major(raw.view(), rows).mapv(softplus),
        }
    }

    /// Decoder feeding its own location forecast back as the previous load
    /// value from step 1 on.
    pub fn decode_autoregressive<T: Real>(&self, p: &[T], h_star: ArrayView2<T>, dec: ArrayView2<T>) -> Emission<T> {
        let b = h_star.nrows();
        let h = self.config.horizon;
        let mut hidden = split_layers(h_star, self.config.layers);
        let mut loc = Array2::zeros((b, h));
        let mut scale = Array2::zeros((b, h));
        for t in 0..h {
            let mut x = dec.slice(s![t * b..(t + 1) * b, ..]).to_owned();
            if t > 0 {
                x.column_mut(0).assign(&loc.column(t - 1));
            }
            let out = self.decoder.step(p, x.view(), &mut hidden);
            let l = self.head_loc.forward(p, out.view());
            let raw = self.head_scale.forward(p, out.view());
            loc.column_mut(t).assign(&l.column(0));
            scale.column_mut(t).assign(&raw.column(0).mapv(softplus));
        }
        Emission { loc, scale }
    }

    /// Corrupts `h0` to level `N` and runs the reverse chain. Row `b` draws
    /// its noise from `rngs[b]` in the order `eps` (D values), then one
    /// D-vector per step `N..=2`.
    pub fn reconstruct<T: Real>(&self, p: &[T], h0: ArrayView2<T>, rngs: &mut [ChaCha8Rng]) -> Array2<T> {
        let (Some(net), Some(sched)) = (&self.noise, &self.schedule) else {
            return h0.to_owned();
        };
        let d = h0.ncols();
        let big_n = sched.steps();
        let a = T::of(sched.alpha_bar(big_n).sqrt());
        let s = T::of((1.0 - sched.alpha_bar(big_n)).sqrt());
        let mut h = h0.as_standard_layout().into_owned();
        for (mut row, rng) in h.axis_iter_mut(Axis(0)).zip(rngs.iter_mut()) {
            let eps: Vec<T> = normal_vec(rng, d);
            for (v, e) in row.iter_mut().zip(eps) {
                *v = a * *v + s * e;
            }
        }
        for n in (1..=big_n).rev() {
            let pred = net.predict(p, h.view(), n);
            for ((mut row, pred), rng) in h.axis_iter_mut(Axis(0)).zip(pred.axis_iter(Axis(0))).zip(rngs.iter_mut()) {
                let row = row.as_slice_mut().expect("standard layout");
                let pred = pred.as_slice().expect("standard layout");
                if n > 1 {
                    let z: Vec<T> = normal_vec(rng, d);
                    reverse_step_with(row, n, pred, Some(&z), sched);
                } else {
                    reverse_step_with(row, n, pred, None, sched);
                }
            }
        }
        h
    }

    /// Stochastic forecast for every row: encode, reconstruct, decode
    /// autoregressively. Identity reconstruction for `o/o`.
    pub fn forecast<T: Real>(&self, p: &[T], enc: ArrayView2<T>, dec: ArrayView2<T>, rngs: &mut [ChaCha8Rng]) -> Emission<T> {
        let h0 = self.encode(p, enc, rngs.len());
        let h_star = self.reconstruct(p, h0.view(), rngs);
        self.decode_autoregressive(p, h_star.view(), dec)
    }

    /// Loss of a batch and its gradient scaled by `weight`, accumulated into
    /// `g`. Row `b` takes all its randomness from `rngs[b]`: the diffusion
    /// step, the noise of the diffusion loss, then the reconstruction noise.
    ///
    /// Denoiser outputs are constants along the reconstruction chain, so the
    /// likelihood gradient reaches the encoder through `dh*/dh0 = I` and the
    /// denoiser learns only from the diffusion loss.
    pub fn loss_and_grad<T: Real>(
        &self,
        p: &[T],
        batch: &Batch<T>,
        rngs: &mut [ChaCha8Rng],
        weight: T,
        g: &mut [T],
    ) -> Result<LossParts> {
        let cfg = &self.config;
        let rows = batch.len();
        self.check_batch(rows, batch.enc.view(), batch.dec.view())?;
        crate::error::check_len("rng streams", rows, rngs.len())?;
        let family = self.family();

        let (_, finals, enc_trace) = self.encoder.forward_seq(p, batch.enc.view(), &self.encoder.zero_state(rows));
        let h0 = concat_layers(&finals);
        let mut dh0 = Array2::<T>::zeros(h0.raw_dim());
        let mut parts = LossParts::default();

        if let (Some(net), Some(sched)) = (&self.noise, &self.schedule) {
            let d = h0.ncols();
            let mut steps = Vec::with_capacity(rows);
            let mut eps = Array2::<T>::zeros((rows, d));
            let mut x = Array2::<T>::zeros((rows, d));
            for (b, rng) in rngs.iter_mut().enumerate() {
                let n = rng.random_range(1..=sched.steps());
                steps.push(n);
                let e: Vec<T> = normal_vec(rng, d);
                let (a, s) = (T::of(sched.alpha_bar(n).sqrt()), T::of((1.0 - sched.alpha_bar(n)).sqrt()));
                for j in 0..d {
                    eps[[b, j]] = e[j];
                    x[[b, j]] = a * h0[[b, j]] + s * e[j];
                }
            }
            let (pred, cache) = net.forward(p, x.view(), &steps);
            let resid = &eps - &pred;
            parts.elbo = resid.iter().map(|r| r.f64() * r.f64()).sum();
            let lw = T::of(cfg.lambda) * weight;
            let dpred = resid.mapv(|r| T::of(-2.0) * r * lw);
            let dx = net.backward(p, &cache, dpred.view(), g);
            if cfg.elbo_to_encoder {
                for (b, &n) in steps.iter().enumerate() {
                    let a = T::of(sched.alpha_bar(n).sqrt());
                    for j in 0..d {
                        dh0[[b, j]] += a * dx[[b, j]];
                    }
                }
            }
        }

        let h_star = self.reconstruct(p, h0.view(), rngs);
        let (outs, _, dec_trace) = self.decoder.forward_seq(p, batch.dec.view(), &split_layers(h_star.view(), cfg.layers));
        let loc = self.head_loc.forward(p, outs.view());
        let raw = self.head_scale.forward(p, outs.view());
        let mut dloc = Array2::<T>::zeros((outs.nrows(), 1));
        let mut draw = Array2::<T>::zeros((outs.nrows(), 1));
        for t in 0..cfg.horizon {
            for b in 0..rows {
                let i = t * rows + b;
                let s = softplus(raw[[i, 0]]);
                let y = batch.target[[b, t]];
                parts.nll += family.nll(y, loc[[i, 0]], s).f64();
                let (gl, gs) = family.nll_grad(y, loc[[i, 0]], s);
                dloc[[i, 0]] = gl * weight;
                draw[[i, 0]] = gs * softplus_grad(raw[[i, 0]]) * weight;
            }
        }
        let mut d_top = self.head_loc.backward(p, outs.view(), dloc.view(), g);
        d_top += &self.head_scale.backward(p, outs.view(), draw.view(), g);
        if !(parts.elbo.is_finite() && parts.nll.is_finite()) {
            return Err(Error::NonFinite(format!("loss elbo={} nll={}", parts.elbo, parts.nll)));
        }
        let zero_final = self.decoder.zero_state(rows);
        let (d_init, _) = self.decoder.backward_seq(p, &dec_trace, Some(d_top.view()), &zero_final, g, false);
        dh0 += &concat_layers(&d_init);
        let d_final = split_layers(dh0.view(), cfg.layers);
        self.encoder.backward_seq(p, &enc_trace, None, &d_final, g, false);
        Ok(parts)
    }

    /// Loss only; same draws as [`Network::loss_and_grad`].
    pub fn loss<T: Real>(&self, p: &[T], batch: &Batch<T>, rngs: &mut [ChaCha8Rng]) -> Result<LossParts> {
        let mut g = vec![T::zero(); p.len()];
        self.loss_and_grad(p, batch, rngs, T::zero(), &mut g)
    }
}

/// `H*B x 1` time-major column to `B x H`.
fn to_batch_major<T: Real>(col: ArrayView2<T>, rows: usize) -> Array2<T> {
    let h = col.nrows() / rows;
    Array2::from_shape_fn((rows, h), |(b, t)| col[[t * rows + b, 0]])
}

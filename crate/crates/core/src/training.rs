//! Mini-batch training with Adam and validation-based early stopping.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::WindowSet;
use crate::error::check_len;
use crate::model::{LossParts, Network};
use crate::rng::{stream, TAG_EVAL, TAG_INIT, TAG_SHUFFLE, TAG_TRAIN};
use crate::{Error, Real, Result};

/// Windows per gradient work unit. Batches are split into chunks of this
/// size whose gradients are summed in order, so results do not depend on the
/// thread count.
pub const CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs without a new best validation RMSE before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            learning_rate: 5e-3,
            patience: 15,
            max_epochs: 300,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::config("batch_size, patience and max_epochs must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments kept in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn update<T: Real>(&mut self, params: &mut [T], grads: &[f64], lr: f64) -> Result<()> {
        check_len("adam parameters", self.m.len(), params.len())?;
        check_len("adam gradients", self.m.len(), grads.len())?;
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let step = lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            *p = T::of(p.f64() - step);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Waiting,
    Stop,
}

/// Tracks the best value of a minimized trace.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epochs: usize,
    waiting: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            epochs: 0,
            waiting: 0,
        }
    }

    /// Records the next value; only a strict decrease counts as improvement.
    pub fn observe(&mut self, value: f64) -> Verdict {
        self.epochs += 1;
        if value < self.best {
            self.best = value;
            self.best_epoch = self.epochs;
            self.waiting = 0;
            Verdict::Improved
        } else {
            self.waiting += 1;
            if self.waiting >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Waiting
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// 1-based; 0 before the first observation.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Patience => "patience",
            StopReason::MaxEpochs => "max_epochs",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per window, one entry per epoch.
    pub train_loss: Vec<f64>,
    pub val_rmse: Vec<f64>,
    pub stop_reason: StopReason,
    pub best_epoch: usize,
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn best_val_rmse(&self) -> f64 {
        self.val_rmse[self.best_epoch - 1]
    }

    /// One `epoch train_loss val_rmse` line per epoch.
    pub fn metrics_log(&self) -> String {
        let mut s = String::new();
        for (i, (l, r)) in self.train_loss.iter().zip(&self.val_rmse).enumerate() {
            writeln!(s, "{} {l:.6} {r:.6}", i + 1).expect("string write");
        }
        s
    }
}

/// Loss and summed gradient of the given windows, scaled by `weight`.
fn batch_gradient(
    net: &Network,
    params: &[f32],
    set: &WindowSet,
    windows: &[usize],
    weight: f64,
    seed: u64,
    epoch: u64,
) -> Result<(f64, Vec<f64>)> {
    let lambda = net.config.lambda;
    let parts: Vec<Result<(f64, Vec<f32>)>> = windows
        .par_chunks(CHUNK)
        .map(|chunk| {
            let batch = set.batch(chunk);
            let mut rngs: Vec<_> = chunk.iter().map(|&w| stream(seed, &[TAG_TRAIN, epoch, set.window_id(w)])).collect();
            let mut g = vec![0f32; params.len()];
            let lp: LossParts = net.loss_and_grad(params, &batch, &mut rngs, weight as f32, &mut g)?;
            Ok((lp.total(lambda), g))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0f64; params.len()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += *b as f64;
        }
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} at epoch {epoch}")));
    }
    Ok((loss, grad))
}

/// Location forecasts of every window, one row of `horizon` values each.
/// Each window draws from its own evaluation stream, so results do not depend
/// on chunking.
pub fn point_forecasts(net: &Network, params: &[f32], set: &WindowSet, seed: u64) -> Vec<Vec<f32>> {
    let idx: Vec<usize> = (0..set.len()).collect();
    idx.par_chunks(CHUNK)
        .flat_map_iter(|chunk| {
            let batch = set.batch(chunk);
            let mut rngs: Vec<_> = chunk.iter().map(|&w| stream(seed, &[TAG_EVAL, set.window_id(w)])).collect();
            let em = net.forecast(params, batch.enc.view(), batch.dec.view(), &mut rngs);
            em.loc.outer_iter().map(|r| r.to_vec()).collect::<Vec<_>>()
        })
        .collect()
}

/// RMSE of single-pass location forecasts over all windows, in standardized
/// units.
pub fn validation_rmse(net: &Network, params: &[f32], set: &WindowSet, seed: u64) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::config("validation split has no windows"));
    }
    let preds = point_forecasts(net, params, set, seed);
    let mut sse = 0.0;
    let mut n = 0usize;
    for (w, p) in preds.iter().enumerate() {
        for (y, f) in set.targets(w).iter().zip(p) {
            sse += ((y - f) as f64).powi(2);
            n += 1;
        }
    }
    let r = (sse / n as f64).sqrt();
    if !r.is_finite() {
        return Err(Error::NonFinite("validation RMSE".into()));
    }
    Ok(r)
}

/// Trains from a seeded initialization and returns the parameters of the
/// epoch with the lowest validation RMSE. `on_epoch` sees
/// `(epoch, train_loss, val_rmse)` as each epoch finishes.
pub fn train(
    net: &Network,
    train_set: &WindowSet,
    val_set: &WindowSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, f64),
) -> Result<(Vec<f32>, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("training split has no windows"));
    }
    if val_set.is_empty() {
        return Err(Error::config("validation split has no windows"));
    }
    let started = Instant::now();
    let mut params: Vec<f32> = net.init_params(&mut stream(cfg.seed, &[TAG_INIT]));
    let mut adam = Adam::new(params.len());
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best = params.clone();
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_rmse: Vec::new(),
        stop_reason: StopReason::MaxEpochs,
        best_epoch: 0,
        wall_time_secs: 0.0,
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut stream(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad) =
                batch_gradient(net, &params, train_set, batch, 1.0 / batch.len() as f64, cfg.seed, epoch as u64)?;
            epoch_loss += loss;
            adam.update(&mut params, &grad, cfg.learning_rate)?;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        let rmse = validation_rmse(net, &params, val_set, cfg.seed)?;
        report.train_loss.push(train_loss);
        report.val_rmse.push(rmse);
        on_epoch(epoch, train_loss, rmse);
        match stopper.observe(rmse) {
            Verdict::Improved => best.copy_from_slice(&params),
            Verdict::Waiting => {}
            Verdict::Stop => {
                report.stop_reason = StopReason::Patience;
                break;
            }
        }
    }
    report.best_epoch = stopper.best_epoch();
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Segment, CALENDAR_FEATURES};
    use crate::model::{ModelConfig, Variant};
    use chrono::{NaiveDate, TimeDelta};
    use ndarray::Array2;

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut a = Adam::new(3);
        let mut p = vec![1.0f64, -2.0, 0.5];
        a.update(&mut p, &[0.0; 3], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert!(a.update(&mut p, &[0.0; 2], 0.1).is_err());
    }

    #[test]
    fn adam_first_steps() {
        // Bias correction makes every step with a constant gradient equal
        // to lr * g / (|g| + eps).
        for g in [3.0, -0.02, 1e-6] {
            let mut a = Adam::new(1);
            let mut p = [0.25f64];
            a.update(&mut p, &[g], 0.01).unwrap();
            let step = 0.01 * g / (g.abs() + 1e-8);
            assert!((p[0] - (0.25 - step)).abs() < 1e-15);
            a.update(&mut p, &[g], 0.01).unwrap();
            assert!((p[0] - (0.25 - 2.0 * step)).abs() < 1e-12);
        }
        let mut a = Adam::new(1);
        let mut p = [0.0f64];
        a.update(&mut p, &[5.0], 1e-3).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-11);
    }

    #[test]
    fn adam_varying_gradient_matches_hand_evaluation() {
        let mut a = Adam::new(1);
        let mut p = [1.0f64];
        a.update(&mut p, &[1.0], 0.1).unwrap();
        a.update(&mut p, &[-2.0], 0.1).unwrap();
        let m = 0.9 * 0.1 + 0.1 * -2.0;
        let v = 0.999 * 0.001 + 0.001 * 4.0;
        let expect = 1.0 - 0.1 / (1.0 + 1e-8) - 0.1 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64 * 0.999)).sqrt() + 1e-8);
        assert!((p[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn patience_rule() {
        let mut s = EarlyStopper::new(15);
        let mut trace = vec![1.0, 0.9];
        trace.extend(std::iter::repeat_n(0.91, 15));
        let verdicts: Vec<Verdict> = trace.iter().map(|&v| s.observe(v)).collect();
        assert_eq!(verdicts[..2], [Verdict::Improved, Verdict::Improved]);
        assert!(verdicts[2..16].iter().all(|v| *v == Verdict::Waiting));
        assert_eq!(verdicts[16], Verdict::Stop);
        assert_eq!(s.best_epoch(), 2);
        assert_eq!(s.best(), 0.9);
        let mut t = EarlyStopper::new(2);
        assert_eq!(t.observe(1.0), Verdict::Improved);
        assert_eq!(t.observe(1.0), Verdict::Waiting);
        assert_eq!(t.observe(0.5), Verdict::Improved);
    }

    fn constant_set(len: usize, level: f32, horizon: usize, offset: usize) -> WindowSet {
        let start = NaiveDate::from_ymd_opt(2021, 1, 4).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let timestamps = (0..len).map(|i| start + TimeDelta::hours((offset + i) as i64)).collect();
        let mut features = Array2::zeros((len, 1 + CALENDAR_FEATURES));
        for i in 0..len {
            features[[i, 0]] = level;
        }
        let seg = Segment {
            timestamps,
            features,
            offset,
        };
        WindowSet::new(seg, 8, horizon, 1).unwrap()
    }

    fn tiny(variant: Variant) -> Network {
        Network::new(ModelConfig {
            variant,
            input_dim: 1 + CALENDAR_FEATURES,
            horizon: 3,
            hidden: 4,
            layers: 1,
            steps: 5,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn constant_series_is_learned() {
        let net = tiny(Variant::OO);
        let tr = constant_set(80, 0.7, 3, 0);
        let va = constant_set(30, 0.7, 3, 80);
        let cfg = TrainConfig {
            batch_size: 16,
            max_epochs: 50,
            seed: 4,
            ..TrainConfig::default()
        };
        let (params, report) = train(&net, &tr, &va, &cfg, |_, _, _| {}).unwrap();
        assert!(report.best_val_rmse() < 0.05, "{:?}", report.val_rmse);
        let min = report.val_rmse.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_val_rmse(), min);
        assert_eq!(validation_rmse(&net, &params, &va, cfg.seed).unwrap(), min);
        assert_eq!(report.metrics_log().lines().count(), report.val_rmse.len());
    }

    #[test]
    fn training_is_deterministic_and_finite() {
        let net = tiny(Variant::DC);
        let tr = constant_set(60, 0.3, 3, 0);
        let va = constant_set(20, 0.3, 3, 60);
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let (p1, r1) = train(&net, &tr, &va, &cfg, |_, _, _| {}).unwrap();
        let (p2, r2) = train(&net, &tr, &va, &cfg, |_, _, _| {}).unwrap();
        assert_eq!(r1.train_loss, r2.train_loss);
        assert_eq!(r1.val_rmse, r2.val_rmse);
        assert_eq!(p1, p2);
        assert!(r1.train_loss.iter().all(|l| l.is_finite()));
        assert_eq!(r1.stop_reason, StopReason::MaxEpochs);
    }

    #[test]
    fn empty_splits_are_rejected() {
        let net = tiny(Variant::OO);
        let tr = constant_set(40, 0.0, 3, 0);
        let mut empty = constant_set(40, 0.0, 3, 40);
        empty.starts.clear();
        let cfg = TrainConfig::default();
        assert!(matches!(train(&net, &empty, &tr, &cfg, |_, _, _| {}), Err(Error::Config(_))));
        assert!(matches!(train(&net, &tr, &empty, &cfg, |_, _, _| {}), Err(Error::Config(_))));
    }

    #[test]
    fn rmse_examples() {
        let net = tiny(Variant::OO);
        let va = constant_set(20, 0.0, 3, 0);
        let zeros = net.layout.zeros::<f32>();
        assert_eq!(validation_rmse(&net, &zeros, &va, 0).unwrap(), 0.0);
        let mut one = constant_set(20, 0.0, 3, 0);
        for i in 0..20 {
            one.segment.features[[i, 0]] = if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        assert!((validation_rmse(&net, &zeros, &one, 0).unwrap() - 1.0).abs() < 1e-12);
    }
}

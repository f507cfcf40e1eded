//! AdamW with a warmup-cosine schedule, flight-level validation and
//! best-checkpoint retention.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{compute_norm_stats, Dataset, FlightSample};
use crate::error::{Error, Result};
use crate::evaluation::metrics;
use crate::kv::KvFile;
use crate::neural::{DropoutSeed, MlpArch, MlpCheckpoint, MlpGrads, MlpParams, TrainMeta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_frac: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Decoupled decay on weight matrices; off by default since the loss
    /// already carries an L2 term.
    pub weight_decay: f64,
    pub seed: u64,
    /// Share of training flights held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 4096,
            base_lr: 1e-3,
            warmup_frac: 0.10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            seed: 42,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be ≥ 1".into());
        }
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return bad(format!("warmup_frac {} must lie in (0, 1)", self.warmup_frac));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction {} must lie in (0, 1)", self.val_fraction));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr {} must be positive", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("adam_eps must be positive and weight_decay non-negative".into());
        }
        Ok(())
    }
}

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub step: u64,
}

impl OptState {
    pub fn new(params: &MlpParams) -> Self {
        OptState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Linear warmup over the first `round(warmup_frac * total)` steps, then
/// cosine decay to zero.
pub fn lr_at(step: u64, total_steps: u64, cfg: &TrainConfig) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    let step = step.min(total_steps) as f64;
    let total = total_steps as f64;
    let warm = (cfg.warmup_frac * total).round();
    if step < warm {
        return Ok(cfg.base_lr * step / warm);
    }
    if total <= warm {
        return Ok(cfg.base_lr);
    }
    let progress = (step - warm) / (total - warm);
    Ok(cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

struct AdamCoeffs {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
}

impl AdamCoeffs {
    fn update(&self, theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], decay: f64) {
        for (((t, &g), m), v) in theta.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *t *= 1.0 - decay;
            *m = self.b1 * *m + (1.0 - self.b1) * g;
            *v = self.b2 * *v + (1.0 - self.b2) * g * g;
            let m_hat = *m / self.bc1;
            let v_hat = *v / self.bc2;
            *t -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// One AdamW update. Decay touches weight matrices only.
pub fn adamw_step(
    params: &mut MlpParams,
    grads: &MlpGrads,
    state: &mut OptState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient at optimizer step {}",
            state.step + 1
        )));
    }
    if grads.layers.len() != params.layers.len() {
        return Err(Error::LengthMismatch {
            left: params.layers.len(),
            right: grads.layers.len(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c = AdamCoeffs {
        lr,
        b1: cfg.adam_beta1,
        b2: cfg.adam_beta2,
        eps: cfg.adam_eps,
        bc1: 1.0 - cfg.adam_beta1.powi(t),
        bc2: 1.0 - cfg.adam_beta2.powi(t),
    };
    let decay = lr * cfg.weight_decay;
    for (((p, g), m), v) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.m.layers)
        .zip(&mut state.v.layers)
    {
        c.update(&mut p.weights, &g.weights, &mut m.weights, &mut v.weights, decay);
        c.update(&mut p.bias, &g.bias, &mut m.bias, &mut v.bias, 0.0);
    }
    if let (Some(a), Some(ga), Some(ma), Some(va)) = (
        params.age_coeff.as_mut(),
        grads.age_coeff,
        state.m.age_coeff.as_mut(),
        state.v.age_coeff.as_mut(),
    ) {
        c.update(
            std::slice::from_mut(a),
            &[ga],
            std::slice::from_mut(ma),
            std::slice::from_mut(va),
            0.0,
        );
    }
    Ok(())
}

/// Per-epoch training log line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mae_kgh: f64,
    pub val_mape_pct: f64,
    pub lr: f64,
}

/// Keeps the checkpoint with the lowest validation loss; ties keep the
/// earlier epoch.
#[derive(Debug, Default)]
pub struct BestTracker {
    best: Option<(usize, f64, MlpCheckpoint)>,
}

impl BestTracker {
    pub fn observe(&mut self, epoch: usize, val_loss: f64, ck: &MlpCheckpoint) -> bool {
        if !val_loss.is_finite() {
            return false;
        }
        let better = self.best.as_ref().is_none_or(|(_, l, _)| val_loss < *l);
        if better {
            self.best = Some((epoch, val_loss, ck.clone()));
        }
        better
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|b| b.0)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.1)
    }

    pub fn into_best(self) -> Option<(usize, f64, MlpCheckpoint)> {
        self.best
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: MlpCheckpoint,
    pub log: Vec<EpochRecord>,
    /// Epoch at which the loss went non-finite, if it did.
    pub diverged_at: Option<usize>,
}

/// Holds out whole flights for validation, chosen by a seeded shuffle.
pub fn flight_validation_split(ds: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut flights = ds.flight_ranges();
    if flights.len() < 2 {
        return Err(Error::Data(format!(
            "validation split needs at least 2 flights, found {}",
            flights.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    flights.shuffle(&mut rng);
    let n_val = ((val_fraction * flights.len() as f64).round() as usize).clamp(1, flights.len() - 1);
    let mut val_ranges: Vec<_> = flights[..n_val].iter().map(|f| f.1.clone()).collect();
    let mut train_ranges: Vec<_> = flights[n_val..].iter().map(|f| f.1.clone()).collect();
    val_ranges.sort_by_key(|r| r.start);
    train_ranges.sort_by_key(|r| r.start);
    let gather = |ranges: &[std::ops::Range<usize>]| -> Vec<FlightSample> {
        ranges.iter().flat_map(|r| ds.samples[r.clone()].iter().cloned()).collect()
    };
    Ok((
        Dataset::new(gather(&train_ranges), format!("{} [fit]", ds.provenance)),
        Dataset::new(gather(&val_ranges), format!("{} [val]", ds.provenance)),
    ))
}

pub fn train(arch: &MlpArch, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    arch.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (fit, val) = flight_validation_split(ds, cfg.val_fraction, cfg.seed)?;
    let norm = compute_norm_stats(&fit, &arch.feature_list())?;
    let mut ck = MlpCheckpoint::new(*arch, norm, cfg.seed)?;
    let fit_enc = ck.encode(&fit.samples)?;
    let val_enc = ck.encode(&val.samples)?;
    let val_targets = val.targets()?;
    fit.targets()?;

    let n = fit_enc.len();
    let batches = n.div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches) as u64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = OptState::new(&ck.params);
    let mut tracker = BestTracker::default();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut diverged_at = None;
    let mut lr = 0.0;

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut data_loss = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            lr = lr_at(opt.step, total_steps, cfg)?;
            let dropout = (arch.dropout_rate > 0.0).then_some(DropoutSeed {
                seed: cfg.seed,
                step: opt.step,
            });
            let (loss, grads) = ck.batch_gradient(&fit_enc, idx, dropout);
            if !loss.is_finite() {
                log::error!("training loss became non-finite in epoch {epoch}");
                diverged_at = Some(epoch);
                break 'epochs;
            }
            if let Err(e) = adamw_step(&mut ck.params, &grads, &mut opt, lr, cfg) {
                log::error!("epoch {epoch}: {e}");
                diverged_at = Some(epoch);
                break 'epochs;
            }
            data_loss += loss * idx.len() as f64;
        }
        if !ck.params.is_finite() {
            log::error!("parameters became non-finite in epoch {epoch}");
            diverged_at = Some(epoch);
            break;
        }
        let train_loss = data_loss / n as f64 + arch.l2_lambda * ck.params.weight_sq_norm();
        let val_loss = ck.loss(&val_enc)?;
        let m = metrics(&ck.predict_encoded(&val_enc), &val_targets)?;
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_mae_kgh: m.mae,
            val_mape_pct: m.mape.unwrap_or(f64::NAN) * 100.0,
            lr,
        };
        log::info!(
            "epoch {epoch}/{}: train {train_loss:.5} val {val_loss:.5} mae {:.1} kg/h",
            cfg.epochs,
            m.mae
        );
        log.push(rec);
        if !val_loss.is_finite() {
            diverged_at = Some(epoch);
            break;
        }
        tracker.observe(epoch, val_loss, &ck);
    }

    let epochs_run = log.len();
    let Some((best_epoch, best_loss, mut best)) = tracker.into_best() else {
        return Err(Error::Numeric("training diverged before the first validation pass".into()));
    };
    best.train_meta = TrainMeta {
        epochs_run,
        best_epoch,
        best_val_loss: Some(best_loss),
        seed: cfg.seed,
    };
    Ok(TrainOutcome {
        checkpoint: best,
        log,
        diverged_at,
    })
}

pub fn write_train_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,val_mae_kgh,val_mape_pct,lr\n");
    for r in log {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_loss, r.val_mae_kgh, r.val_mape_pct, r.lr
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

impl TrainConfig {
    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        kv.insert("epochs", self.epochs);
        kv.insert("batch_size", self.batch_size);
        kv.insert("base_lr", self.base_lr);
        kv.insert("warmup_frac", self.warmup_frac);
        kv.insert("adam_beta1", self.adam_beta1);
        kv.insert("adam_beta2", self.adam_beta2);
        kv.insert("adam_eps", self.adam_eps);
        kv.insert("weight_decay", self.weight_decay);
        kv.insert("seed", self.seed);
        kv.insert("val_fraction", self.val_fraction);
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::testutil::sample;
    use crate::neural::{Dense, Variant};
    use rand::Rng;

    fn cfg() -> TrainConfig {
        TrainConfig {
            base_lr: 0.01,
            ..Default::default()
        }
    }

    #[test]
    fn schedule_values() {
        let c = cfg();
        let total = 1000;
        let w = 100;
        assert_eq!(lr_at(0, total, &c).unwrap(), 0.0);
        assert_eq!(lr_at(w, total, &c).unwrap(), c.base_lr);
        assert!((lr_at(50, total, &c).unwrap() - 0.005).abs() < 1e-15);
        let mid = w + (total - w) / 2;
        assert!((lr_at(mid, total, &c).unwrap() - 0.5 * c.base_lr).abs() < 1e-15);
        assert!(lr_at(total, total, &c).unwrap() <= 1e-12 * c.base_lr);
        assert!(lr_at(0, 0, &c).is_err());
        // continuity at the junction
        let before = lr_at(w - 1, total, &c).unwrap();
        let after = lr_at(w + 1, total, &c).unwrap();
        assert!((before - c.base_lr).abs() <= c.base_lr / w as f64 + 1e-15);
        assert!((after - c.base_lr).abs() < 1e-5 * c.base_lr);
    }

    fn random_params(seed: u64, with_a: bool) -> MlpParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |n_in: usize, n_out: usize| Dense {
            n_in,
            n_out,
            weights: (0..n_in * n_out).map(|_| rng.random_range(-1.0..1.0)).collect(),
            bias: (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let layers = vec![layer(3, 4), layer(4, 1)];
        MlpParams {
            layers,
            age_coeff: with_a.then_some(0.3),
        }
    }

    #[test]
    fn adam_matches_scalar_oracle() {
        let c = TrainConfig::default();
        let mut p = random_params(1, true);
        let mut state = OptState::new(&p);
        let mut flat = p.flat();
        let mut m = vec![0.0; flat.len()];
        let mut v = vec![0.0; flat.len()];
        for step in 1..=5 {
            let g = random_params(100 + step, true);
            let lr = 1e-3 * step as f64;
            adamw_step(&mut p, &g, &mut state, lr, &c).unwrap();
            for (i, gi) in g.flat().into_iter().enumerate() {
                m[i] = 0.9 * m[i] + 0.1 * gi;
                v[i] = 0.999 * v[i] + 0.001 * gi * gi;
                let mh = m[i] / (1.0 - 0.9f64.powi(step as i32));
                let vh = v[i] / (1.0 - 0.999f64.powi(step as i32));
                flat[i] -= lr * mh / (vh.sqrt() + 1e-8);
            }
            for (a, b) in p.flat().iter().zip(&flat) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_gradients() {
        let p0 = random_params(2, true);
        let zeros = p0.zeros_like();
        let mut p = p0.clone();
        let mut s = OptState::new(&p);
        adamw_step(&mut p, &zeros, &mut s, 0.1, &TrainConfig::default()).unwrap();
        assert_eq!(p, p0);

        let c = TrainConfig {
            weight_decay: 0.01,
            ..Default::default()
        };
        let mut p = p0.clone();
        let mut s = OptState::new(&p);
        adamw_step(&mut p, &zeros, &mut s, 0.1, &c).unwrap();
        for (a, b) in p.layers.iter().zip(&p0.layers) {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert!((x - y * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
            }
            assert_eq!(a.bias, b.bias);
        }
        assert_eq!(p.age_coeff, p0.age_coeff);
    }

    #[test]
    fn single_scalar_hand_step() {
        // one weight 0.5, gradient 2, lr 0.1: m̂ = 2, v̂ = 4, step = 0.1·2/(2 + 1e-8)
        let mut p = MlpParams {
            layers: vec![Dense {
                n_in: 1,
                n_out: 1,
                weights: vec![0.5],
                bias: vec![0.0],
            }],
            age_coeff: None,
        };
        let mut g = p.zeros_like();
        g.layers[0].weights[0] = 2.0;
        let mut s = OptState::new(&p);
        adamw_step(&mut p, &g, &mut s, 0.1, &TrainConfig::default()).unwrap();
        let expect = 0.5 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((p.layers[0].weights[0] - expect).abs() < 1e-15);
        assert!((s.m.layers[0].weights[0] - 0.2).abs() < 1e-15);
        assert!((s.v.layers[0].weights[0] - 0.004).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = random_params(3, false);
        let mut g = p.zeros_like();
        g.layers[0].weights[0] = f64::NAN;
        let mut s = OptState::new(&p);
        assert!(matches!(
            adamw_step(&mut p, &g, &mut s, 0.1, &TrainConfig::default()),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn best_tracker_keeps_lowest() {
        let ck = {
            let ds = linear_problem(20);
            let ns = compute_norm_stats(&ds, &tiny_arch(Variant::AgeBlind).feature_list()).unwrap();
            MlpCheckpoint::new(tiny_arch(Variant::AgeBlind), ns, 0).unwrap()
        };
        let mut t = BestTracker::default();
        for (epoch, loss) in [(1, 3.0), (2, 1.0), (3, 2.0)] {
            t.observe(epoch, loss, &ck);
        }
        assert_eq!(t.best_epoch(), Some(2));
        assert_eq!(t.best_loss(), Some(1.0));
        assert!(!t.observe(4, 1.0, &ck));
        assert!(!t.observe(5, f64::NAN, &ck));
    }

    fn tiny_arch(variant: Variant) -> MlpArch {
        MlpArch {
            n_hidden_layers: 1,
            units: 8,
            l2_lambda: 0.0,
            variant,
            ..Default::default()
        }
    }

    /// 20 flights of 10 samples where fuel flow is linear in mass and speed.
    fn linear_problem(n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples = (0..n)
            .map(|i| {
                let mass = rng.random_range(55000.0..75000.0);
                let tas = rng.random_range(300.0..460.0);
                FlightSample {
                    mass,
                    tas,
                    fuel_flow: Some(0.03 * mass + 2.0 * tas),
                    ..sample("A", &format!("{:02}", i / 10), (i % 10) as f64 * 4.0)
                }
            })
            .collect();
        Dataset::new(samples, "linear")
    }

    #[test]
    fn overfits_small_linear_problem() {
        let ds = linear_problem(200);
        let c = TrainConfig {
            epochs: 300,
            batch_size: 32,
            base_lr: 1e-2,
            val_fraction: 0.1,
            seed: 7,
            ..Default::default()
        };
        let out = train(&tiny_arch(Variant::AgeBlind), &ds, &c).unwrap();
        assert!(out.diverged_at.is_none());
        let y = ds.targets().unwrap();
        let preds = out.checkpoint.predict_all(&ds.samples).unwrap();
        let mae = metrics(&preds, &y).unwrap().mae;
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
        assert!(mae < 0.05 * sd, "mae {mae} vs sd {sd}");
        let best = out.log.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(out.checkpoint.train_meta.best_val_loss, Some(best));
        assert_eq!(out.log.len(), 300);
    }

    #[test]
    fn same_seed_same_checkpoint() {
        let ds = linear_problem(200);
        let c = TrainConfig {
            epochs: 5,
            batch_size: 16,
            ..Default::default()
        };
        let arch = MlpArch {
            dropout_rate: 0.2,
            ..tiny_arch(Variant::InductiveBias)
        };
        let a = train(&arch, &ds, &c).unwrap().checkpoint.to_json().unwrap();
        let b = train(&arch, &ds, &c).unwrap().checkpoint.to_json().unwrap();
        assert_eq!(a, b);
        let other = TrainConfig { seed: 8, ..c };
        assert_ne!(a, train(&arch, &ds, &other).unwrap().checkpoint.to_json().unwrap());
    }

    #[test]
    fn validation_split_keeps_flights_whole() {
        let ds = linear_problem(200);
        let (fit, val) = flight_validation_split(&ds, 0.1, 1).unwrap();
        assert_eq!(fit.len() + val.len(), 200);
        assert_eq!(val.flight_ranges().len(), 2);
        for (k, _) in val.flight_ranges() {
            assert!(fit.flight_ranges().iter().all(|(f, _)| *f != k));
        }
        let one = Dataset::new(ds.samples[..10].to_vec(), "one");
        assert!(flight_validation_split(&one, 0.1, 1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { warmup_frac: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}

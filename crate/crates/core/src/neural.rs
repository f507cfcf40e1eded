//! Dense ReLU regressor for fuel flow in three flavours.
//!
//! * `AgeBlind`: flight-state features only.
//! * `AgeInput`: age appended as one more normalized feature.
//! * `InductiveBias`: age bypasses normalization and the hidden stack; the
//!   denormalized network output is multiplied by `1 + a ln(age + 1)` with
//!   a learnable `a`.
//!
//! The final prediction is always clamped at zero. Gradients are computed
//! analytically; ReLU'(0) is taken as 0, as is the clamp derivative.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::age::AgePredictor;
use crate::domain::{Feature, FlightSample, NormStats};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    AgeBlind,
    AgeInput,
    InductiveBias,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "age_blind" => Ok(Variant::AgeBlind),
            "age_input" => Ok(Variant::AgeInput),
            "inductive_bias" => Ok(Variant::InductiveBias),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected age_blind, age_input or inductive_bias)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpArch {
    pub n_hidden_layers: usize,
    pub units: usize,
    pub activation: Activation,
    pub l2_lambda: f64,
    pub dropout_rate: f64,
    pub variant: Variant,
}

impl Default for MlpArch {
    fn default() -> Self {
        MlpArch {
            n_hidden_layers: 5,
            units: 128,
            activation: Activation::Relu,
            l2_lambda: 1e-5,
            dropout_rate: 0.0,
            variant: Variant::AgeBlind,
        }
    }
}

impl MlpArch {
    pub fn validate(&self) -> Result<()> {
        if self.n_hidden_layers == 0 || self.units == 0 {
            return Err(Error::Config("hidden layers and units must be ≥ 1".into()));
        }
        if !(self.l2_lambda >= 0.0) {
            return Err(Error::Config(format!("l2_lambda {} must be ≥ 0", self.l2_lambda)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} must lie in [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Inputs seen by the dense stack for this variant.
    pub fn feature_list(&self) -> Vec<Feature> {
        let mut f = Feature::FLIGHT_STATE.to_vec();
        if self.variant == Variant::AgeInput {
            f.push(Feature::Age);
        }
        f
    }

    fn layer_dims(&self, n_inputs: usize) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.n_hidden_layers + 1);
        let mut fan_in = n_inputs;
        for _ in 0..self.n_hidden_layers {
            dims.push((fan_in, self.units));
            fan_in = self.units;
        }
        dims.push((fan_in, 1));
        dims
    }
}

/// Fully connected layer; `weights` is row-major with one row per output.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.n_in).zip(&self.bias))
        {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// Network parameters; also used to hold gradients of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
    pub age_coeff: Option<f64>,
}

pub type MlpGrads = MlpParams;

impl MlpParams {
    /// He-uniform weights, zero biases, `a = 0` for the inductive-bias head.
    pub fn init(arch: &MlpArch, n_inputs: usize, rng: &mut impl Rng) -> Self {
        let layers = arch
            .layer_dims(n_inputs)
            .into_iter()
            .map(|(n_in, n_out)| {
                let limit = (6.0 / n_in as f64).sqrt();
                Dense {
                    n_in,
                    n_out,
                    weights: (0..n_in * n_out).map(|_| rng.random_range(-limit..limit)).collect(),
                    bias: vec![0.0; n_out],
                }
            })
            .collect();
        MlpParams {
            layers,
            age_coeff: (arch.variant == Variant::InductiveBias).then_some(0.0),
        }
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams {
            layers: self.layers.iter().map(|l| Dense::zeros(l.n_in, l.n_out)).collect(),
            age_coeff: self.age_coeff.map(|_| 0.0),
        }
    }

    /// Σ‖W‖² over weight matrices.
    pub fn weight_sq_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter())
            .map(|w| w * w)
            .sum()
    }

    fn add_assign(&mut self, other: &MlpParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
        if let (Some(a), Some(b)) = (self.age_coeff.as_mut(), other.age_coeff) {
            *a += b;
        }
    }

    fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= k);
            l.bias.iter_mut().for_each(|x| *x *= k);
        }
        if let Some(a) = self.age_coeff.as_mut() {
            *a *= k;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
            && self.age_coeff.is_none_or(f64::is_finite)
    }

    /// Every scalar, in a fixed order: per layer weights then biases, then `a`.
    pub fn flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect();
        v.extend(self.age_coeff);
        v
    }

    /// Mutable access to the scalar at position `i` of [`MlpParams::flat`].
    pub fn flat_mut(&mut self, mut i: usize) -> &mut f64 {
        for l in &mut self.layers {
            if i < l.weights.len() {
                return &mut l.weights[i];
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return &mut l.bias[i];
            }
            i -= l.bias.len();
        }
        match (i, self.age_coeff.as_mut()) {
            (0, Some(a)) => a,
            _ => panic!("parameter index out of range"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// `None` until at least one epoch has been validated.
    pub best_val_loss: Option<f64>,
    pub seed: u64,
}

/// Trained network with everything needed to predict in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCheckpoint {
    pub arch: MlpArch,
    pub params: MlpParams,
    pub norm_stats: NormStats,
    pub feature_list: Vec<Feature>,
    pub train_meta: TrainMeta,
}

/// Samples encoded as normalized input rows plus raw ages and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    pub dim: usize,
    pub inputs: Vec<f64>,
    pub ages: Vec<f64>,
    /// kg/h, empty when the samples carry no targets.
    pub targets: Vec<f64>,
}

impl EncodedBatch {
    pub fn len(&self) -> usize {
        self.ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ages.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    fn require_targets(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if self.targets.len() != self.len() {
            return Err(Error::Data("batch has no fuel-flow targets".into()));
        }
        Ok(())
    }
}

/// Scratch buffers for one forward/backward pass.
struct Trace {
    /// Input followed by each hidden activation.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    /// Dropout multipliers per hidden layer (1 when disabled).
    keep: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Trace {
    fn new(params: &MlpParams) -> Self {
        let hidden = &params.layers[..params.layers.len() - 1];
        let mut acts = vec![vec![0.0; params.layers[0].n_in]];
        acts.extend(hidden.iter().map(|l| vec![0.0; l.n_out]));
        let width = params.layers.iter().map(|l| l.n_in.max(l.n_out)).max().unwrap_or(1);
        Trace {
            acts,
            pre: hidden.iter().map(|l| vec![0.0; l.n_out]).collect(),
            keep: hidden.iter().map(|l| vec![1.0; l.n_out]).collect(),
            delta: Vec::with_capacity(width),
            delta_prev: Vec::with_capacity(width),
        }
    }
}

/// Outcome of one sample's forward pass.
#[derive(Debug, Clone, Copy)]
struct Output {
    /// Denormalized network output, kg/h.
    base: f64,
    /// Age coefficient applied on top (1 for non-inductive variants).
    coeff: f64,
    /// `base * coeff` before clamping.
    raw: f64,
}

impl Output {
    fn prediction(&self) -> f64 {
        self.raw.max(0.0)
    }
}

fn log_age(age: f64) -> f64 {
    (age + 1.0).ln()
}

impl MlpCheckpoint {
    /// Untrained network with freshly initialized weights.
    pub fn new(arch: MlpArch, norm_stats: NormStats, seed: u64) -> Result<Self> {
        arch.validate()?;
        let feature_list = arch.feature_list();
        if norm_stats.features != feature_list {
            return Err(Error::Checkpoint(
                "normalization statistics do not match the variant's features".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = MlpParams::init(&arch, feature_list.len(), &mut rng);
        Ok(MlpCheckpoint {
            arch,
            params,
            norm_stats,
            feature_list,
            train_meta: TrainMeta {
                epochs_run: 0,
                best_epoch: 0,
                best_val_loss: None,
                seed,
            },
        })
    }

    fn check_consistency(&self) -> Result<()> {
        self.arch.validate()?;
        if self.feature_list != self.arch.feature_list() {
            return Err(Error::Checkpoint(format!(
                "feature list {:?} does not match variant {:?}",
                self.feature_list, self.arch.variant
            )));
        }
        if self.norm_stats.features != self.feature_list
            || self.norm_stats.inputs.len() != self.feature_list.len()
        {
            return Err(Error::Checkpoint("normalization statistics do not match features".into()));
        }
        let dims = self.arch.layer_dims(self.feature_list.len());
        if dims.len() != self.params.layers.len()
            || dims.iter().zip(&self.params.layers).any(|(&(i, o), l)| {
                l.n_in != i || l.n_out != o || l.weights.len() != i * o || l.bias.len() != o
            })
        {
            return Err(Error::Checkpoint("layer shapes do not match the architecture".into()));
        }
        if (self.arch.variant == Variant::InductiveBias) != self.params.age_coeff.is_some() {
            return Err(Error::Checkpoint("age coefficient presence does not match variant".into()));
        }
        if !self.params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameters".into()));
        }
        Ok(())
    }

    /// Learned `a` of the inductive-bias head.
    pub fn age_coeff(&self) -> Option<f64> {
        self.params.age_coeff
    }

    fn encode_row(&self, s: &FlightSample, age: f64, out: &mut [f64]) -> Result<()> {
        for ((slot, &f), stats) in out
            .iter_mut()
            .zip(&self.feature_list)
            .zip(&self.norm_stats.inputs)
        {
            let v = if f == Feature::Age { age } else { f.require(s)? };
            if !v.is_finite() {
                return Err(Error::Data(format!("feature {f} is not finite")));
            }
            *slot = stats.normalize(v);
        }
        Ok(())
    }

    pub fn encode(&self, samples: &[FlightSample]) -> Result<EncodedBatch> {
        let dim = self.feature_list.len();
        let mut inputs = vec![0.0; samples.len() * dim];
        for (s, row) in samples.iter().zip(inputs.chunks_exact_mut(dim)) {
            self.encode_row(s, s.age, row)?;
        }
        let targets = if samples.iter().all(|s| s.fuel_flow.is_some()) {
            samples.iter().map(|s| s.fuel_flow.unwrap_or(0.0)).collect()
        } else {
            Vec::new()
        };
        Ok(EncodedBatch {
            dim,
            inputs,
            ages: samples.iter().map(|s| s.age).collect(),
            targets,
        })
    }

    fn forward_row(&self, x: &[f64], age: f64, tr: &mut Trace) -> Output {
        let n_hidden = self.params.layers.len() - 1;
        tr.acts[0].copy_from_slice(x);
        for l in 0..n_hidden {
            let layer = &self.params.layers[l];
            let (inp, rest) = tr.acts.split_at_mut(l + 1);
            layer.affine(&inp[l], &mut tr.pre[l]);
            for ((a, &z), &k) in rest[0].iter_mut().zip(&tr.pre[l]).zip(&tr.keep[l]) {
                *a = if z > 0.0 { z * k } else { 0.0 };
            }
        }
        let mut o = [0.0];
        self.params.layers[n_hidden].affine(&tr.acts[n_hidden], &mut o);
        let base = self.norm_stats.target.denormalize(o[0]);
        let coeff = match self.params.age_coeff {
            Some(a) => 1.0 + a * log_age(age),
            None => 1.0,
        };
        Output {
            base,
            coeff,
            raw: base * coeff,
        }
    }

    /// Prediction in kg/h for one sample.
    pub fn forward(&self, sample: &FlightSample) -> Result<f64> {
        self.predict_at_age(sample, sample.age)
    }

    /// Predictions for an encoded batch.
    pub fn predict_encoded(&self, batch: &EncodedBatch) -> Vec<f64> {
        let mut tr = Trace::new(&self.params);
        (0..batch.len())
            .map(|i| self.forward_row(batch.row(i), batch.ages[i], &mut tr).prediction())
            .collect()
    }

    pub fn predict_all(&self, samples: &[FlightSample]) -> Result<Vec<f64>> {
        let batch = self.encode(samples)?;
        const CHUNK: usize = 4096;
        let parts: Vec<Vec<f64>> = (0..batch.len())
            .step_by(CHUNK)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&start| {
                let mut tr = Trace::new(&self.params);
                (start..(start + CHUNK).min(batch.len()))
                    .map(|i| self.forward_row(batch.row(i), batch.ages[i], &mut tr).prediction())
                    .collect()
            })
            .collect();
        Ok(parts.concat())
    }

    /// ReLU on/off pattern of every hidden unit and of the output clamp over
    /// a batch. Finite-difference checks use it to detect kink crossings.
    pub fn activation_pattern(&self, batch: &EncodedBatch) -> Vec<bool> {
        let mut tr = Trace::new(&self.params);
        let mut out = Vec::new();
        for i in 0..batch.len() {
            let o = self.forward_row(batch.row(i), batch.ages[i], &mut tr);
            for pre in &tr.pre {
                out.extend(pre.iter().map(|&z| z > 0.0));
            }
            out.push(o.raw > 0.0);
        }
        out
    }

    /// Training objective: MSE on the normalized target plus L2 on weights.
    pub fn loss(&self, batch: &EncodedBatch) -> Result<f64> {
        batch.require_targets()?;
        let sigma = self.norm_stats.target.std;
        let mut tr = Trace::new(&self.params);
        let mut sse = 0.0;
        for i in 0..batch.len() {
            let pred = self.forward_row(batch.row(i), batch.ages[i], &mut tr).prediction();
            let r = (pred - batch.targets[i]) / sigma;
            sse += r * r;
        }
        Ok(sse / batch.len() as f64 + self.arch.l2_lambda * self.params.weight_sq_norm())
    }

    /// Exact gradient of [`MlpCheckpoint::loss`] with dropout off.
    pub fn backward(&self, batch: &EncodedBatch) -> Result<MlpGrads> {
        batch.require_targets()?;
        let idx: Vec<usize> = (0..batch.len()).collect();
        Ok(self.batch_gradient(batch, &idx, None).1)
    }

    /// Mean data loss and full gradient over `idx`, computed in fixed chunks
    /// reduced in order so the result does not depend on thread count.
    pub(crate) fn batch_gradient(
        &self,
        batch: &EncodedBatch,
        idx: &[usize],
        dropout: Option<DropoutSeed>,
    ) -> (f64, MlpGrads) {
        const CHUNK: usize = 256;
        let n = idx.len() as f64;
        let parts: Vec<(f64, MlpGrads)> = idx
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut rng = dropout.map(|d| d.rng(c));
                self.chunk_gradient(batch, chunk, rng.as_mut())
            })
            .collect();
        let mut grads = self.params.zeros_like();
        let mut sse = 0.0;
        for (s, g) in &parts {
            sse += s;
            grads.add_assign(g);
        }
        grads.scale(1.0 / n);
        let l2 = self.arch.l2_lambda;
        for (g, p) in grads.layers.iter_mut().zip(&self.params.layers) {
            g.weights
                .iter_mut()
                .zip(&p.weights)
                .for_each(|(gw, w)| *gw += 2.0 * l2 * w);
        }
        (sse / n, grads)
    }

    fn chunk_gradient(
        &self,
        batch: &EncodedBatch,
        idx: &[usize],
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> (f64, MlpGrads) {
        let sigma = self.norm_stats.target.std;
        let p_drop = self.arch.dropout_rate;
        let mut g = self.params.zeros_like();
        let mut tr = Trace::new(&self.params);
        let n_hidden = self.params.layers.len() - 1;
        let mut sse = 0.0;
        for &i in idx {
            if let Some(rng) = dropout.as_deref_mut() {
                let scale = 1.0 / (1.0 - p_drop);
                for keep in &mut tr.keep {
                    for k in keep.iter_mut() {
                        *k = if rng.random::<f64>() < p_drop { 0.0 } else { scale };
                    }
                }
            }
            let out = self.forward_row(batch.row(i), batch.ages[i], &mut tr);
            let r = (out.prediction() - batch.targets[i]) / sigma;
            sse += r * r;
            if out.raw <= 0.0 {
                continue;
            }
            // per-sample derivative of r², later divided by the batch size
            let d_raw = 2.0 * r / sigma;
            if let (Some(ga), Some(_)) = (g.age_coeff.as_mut(), self.params.age_coeff) {
                *ga += d_raw * out.base * log_age(batch.ages[i]);
            }
            let d_out = d_raw * out.coeff * sigma;

            let top = &self.params.layers[n_hidden];
            let gt = &mut g.layers[n_hidden];
            for (gw, a) in gt.weights.iter_mut().zip(&tr.acts[n_hidden]) {
                *gw += d_out * a;
            }
            gt.bias[0] += d_out;
            tr.delta.clear();
            tr.delta.extend(top.weights.iter().map(|w| w * d_out));

            for l in (0..n_hidden).rev() {
                for ((d, &z), &k) in tr.delta.iter_mut().zip(&tr.pre[l]).zip(&tr.keep[l]) {
                    if z <= 0.0 {
                        *d = 0.0;
                    } else {
                        *d *= k;
                    }
                }
                let layer = &self.params.layers[l];
                let gl = &mut g.layers[l];
                let input = &tr.acts[l];
                for (o, &d) in tr.delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gl.bias[o] += d;
                    let row = &mut gl.weights[o * layer.n_in..(o + 1) * layer.n_in];
                    row.iter_mut().zip(input).for_each(|(gw, x)| *gw += d * x);
                }
                if l > 0 {
                    tr.delta_prev.clear();
                    tr.delta_prev.resize(layer.n_in, 0.0);
                    for (o, &d) in tr.delta.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                        tr.delta_prev.iter_mut().zip(row).for_each(|(dp, w)| *dp += d * w);
                    }
                    std::mem::swap(&mut tr.delta, &mut tr.delta_prev);
                }
            }
        }
        if dropout.is_some() {
            tr.keep.iter_mut().for_each(|k| k.iter_mut().for_each(|v| *v = 1.0));
        }
        (sse, g)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            arch: self.arch,
            feature_list: self.feature_list.clone(),
            norm_stats: self.norm_stats.clone(),
            weights: self.params.layers.iter().map(|l| l.weights.clone()).collect(),
            biases: self.params.layers.iter().map(|l| l.bias.clone()).collect(),
            age_coeff: self.params.age_coeff,
            train_meta: self.train_meta.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                file.version
            )));
        }
        if file.weights.len() != file.biases.len() {
            return Err(Error::Checkpoint("weights and biases disagree in depth".into()));
        }
        let layers = file
            .weights
            .into_iter()
            .zip(file.biases)
            .map(|(weights, bias)| {
                let n_out = bias.len();
                let n_in = if n_out == 0 { 0 } else { weights.len() / n_out };
                Dense {
                    n_in,
                    n_out,
                    weights,
                    bias,
                }
            })
            .collect();
        let ck = MlpCheckpoint {
            arch: file.arch,
            params: MlpParams {
                layers,
                age_coeff: file.age_coeff,
            },
            norm_stats: file.norm_stats,
            feature_list: file.feature_list,
            train_meta: file.train_meta,
        };
        ck.check_consistency()?;
        Ok(ck)
    }
}

impl AgePredictor for MlpCheckpoint {
    fn predict_at_age(&self, sample: &FlightSample, age: f64) -> Result<f64> {
        let mut row = vec![0.0; self.feature_list.len()];
        self.encode_row(sample, age, &mut row)?;
        let mut tr = Trace::new(&self.params);
        Ok(self.forward_row(&row, age, &mut tr).prediction())
    }
}

/// Seed material for per-chunk dropout masks of one optimizer step.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DropoutSeed {
    pub seed: u64,
    pub step: u64,
}

impl DropoutSeed {
    fn rng(&self, chunk: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9E37_79B9_7F4A_7C15);
        rng.set_stream((self.step << 24) | chunk as u64);
        rng
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    arch: MlpArch,
    feature_list: Vec<Feature>,
    norm_stats: NormStats,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    age_coeff: Option<f64>,
    train_meta: TrainMeta,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{compute_norm_stats, testutil::sample, ColumnStats, Dataset};
    use proptest::prelude::{proptest, ProptestConfig};

    fn random_samples(n: usize, seed: u64) -> Vec<FlightSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| FlightSample {
                pressure_alt: rng.random_range(0.0..40000.0),
                tas: rng.random_range(200.0..480.0),
                dtas_dt: Some(rng.random_range(-0.5..0.5)),
                vertical_speed: rng.random_range(-2000.0..2000.0),
                ground_speed: rng.random_range(200.0..480.0),
                mass: rng.random_range(50000.0..75000.0),
                age: rng.random_range(0.0..20.0),
                sat: rng.random_range(210.0..290.0),
                fuel_flow: Some(rng.random_range(300.0..6000.0)),
                ..sample("A", "1", i as f64 * 4.0)
            })
            .collect()
    }

    fn checkpoint(variant: Variant, depth: usize, width: usize, l2: f64, seed: u64) -> MlpCheckpoint {
        let arch = MlpArch {
            n_hidden_layers: depth,
            units: width,
            l2_lambda: l2,
            variant,
            ..Default::default()
        };
        let ds = Dataset::new(random_samples(64, seed + 1), "t");
        let ns = compute_norm_stats(&ds, &arch.feature_list()).unwrap();
        let mut ck = MlpCheckpoint::new(arch, ns, seed).unwrap();
        // random biases and a so every gradient path is exercised
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
        for l in &mut ck.params.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
        }
        if let Some(a) = ck.params.age_coeff.as_mut() {
            *a = rng.random_range(-0.05..0.1);
        }
        ck
    }

    /// Central differences with the activation pattern held fixed; the step
    /// shrinks when ±h would cross a ReLU kink.
    fn gradient_check(ck: &MlpCheckpoint, batch: &EncodedBatch) -> usize {
        let grads = ck.backward(batch).unwrap().flat();
        let base_pattern = ck.activation_pattern(batch);
        let mut checked = 0;
        for (i, g) in grads.iter().enumerate() {
            let mut h = 1e-4;
            let fd = loop {
                let mut plus = ck.clone();
                *plus.params.flat_mut(i) += h;
                let mut minus = ck.clone();
                *minus.params.flat_mut(i) -= h;
                if plus.activation_pattern(batch) == base_pattern
                    && minus.activation_pattern(batch) == base_pattern
                {
                    break Some(
                        (plus.loss(batch).unwrap() - minus.loss(batch).unwrap()) / (2.0 * h),
                    );
                }
                h /= 10.0;
                if h < 1e-9 {
                    break None;
                }
            };
            let Some(fd) = fd else { continue };
            let tol = 1e-4 * g.abs().max(fd.abs()) + 1e-9;
            assert!((g - fd).abs() <= tol, "param {i}: analytic {g} vs fd {fd}");
            checked += 1;
        }
        checked
    }

    #[test]
    fn gradients_match_finite_differences_all_variants() {
        for (k, variant) in [Variant::AgeBlind, Variant::AgeInput, Variant::InductiveBias]
            .into_iter()
            .enumerate()
        {
            let ck = checkpoint(variant, 2, 8, 1e-3, 10 + k as u64);
            let batch = ck.encode(&random_samples(32, 99)).unwrap();
            let n = ck.params.flat().len();
            assert!(gradient_check(&ck, &batch) >= n * 9 / 10);
        }
    }

    #[test]
    fn inductive_bias_with_zero_a_matches_age_blind() {
        let ib = checkpoint(Variant::InductiveBias, 2, 6, 0.0, 3);
        let mut blind = ib.clone();
        blind.arch.variant = Variant::AgeBlind;
        blind.params.age_coeff = None;
        let mut ib0 = ib.clone();
        ib0.params.age_coeff = Some(0.0);
        for s in random_samples(20, 5) {
            assert_eq!(ib0.forward(&s).unwrap(), blind.forward(&s).unwrap());
            // age zero switches the head off whatever a is
            assert_eq!(
                ib.predict_at_age(&s, 0.0).unwrap(),
                blind.predict_at_age(&s, 0.0).unwrap()
            );
        }
    }

    #[test]
    fn hand_built_single_unit_network() {
        let ns = NormStats {
            features: Feature::FLIGHT_STATE.to_vec(),
            inputs: vec![ColumnStats { mean: 0.0, std: 1.0 }; 7],
            target: ColumnStats { mean: 2000.0, std: 500.0 },
        };
        let mut ns = ns;
        ns.inputs[0] = ColumnStats { mean: 30000.0, std: 10000.0 };
        let arch = MlpArch {
            n_hidden_layers: 1,
            units: 1,
            variant: Variant::InductiveBias,
            ..Default::default()
        };
        let mut ck = MlpCheckpoint::new(arch, ns, 0).unwrap();
        ck.params.layers[0].weights = vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        ck.params.layers[0].bias = vec![0.1];
        ck.params.layers[1].weights = vec![2.0];
        ck.params.layers[1].bias = vec![-0.2];
        ck.params.age_coeff = Some(0.02);
        let s = FlightSample {
            pressure_alt: 35000.0,
            age: 4.0,
            ..sample("A", "1", 0.0)
        };
        // x = 0.5, z = 0.35, h = 0.35, o = 0.5, base = 2250, coeff = 1 + 0.02 ln 5
        let expect = 2250.0 * (1.0 + 0.02 * 5.0f64.ln());
        assert!((ck.forward(&s).unwrap() - expect).abs() < 1e-9);
        // negative pre-activation is cut by the ReLU: base = 2000 - 0.2*500
        let low = FlightSample {
            pressure_alt: 0.0,
            ..s.clone()
        };
        let expect_low = 1900.0 * (1.0 + 0.02 * 5.0f64.ln());
        assert!((ck.forward(&low).unwrap() - expect_low).abs() < 1e-9);
        // output clamp
        ck.params.layers[1].bias = vec![-10.0];
        assert_eq!(ck.forward(&s).unwrap(), 0.0);
    }

    #[test]
    fn loss_special_cases() {
        let mut ck = checkpoint(Variant::AgeBlind, 2, 4, 0.0, 1);
        for l in &mut ck.params.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let samples = random_samples(16, 2);
        let batch = ck.encode(&samples).unwrap();
        let t = ck.norm_stats.target;
        let expect: f64 = samples
            .iter()
            .map(|s| t.normalize(s.fuel_flow.unwrap()).powi(2))
            .sum::<f64>()
            / 16.0;
        assert!((ck.loss(&batch).unwrap() - expect).abs() < 1e-12);

        // perfect prediction: targets set to the network's own output
        let ck = checkpoint(Variant::InductiveBias, 2, 4, 0.0, 4);
        let mut batch = ck.encode(&samples).unwrap();
        batch.targets = ck.predict_encoded(&batch);
        assert!(ck.loss(&batch).unwrap() < 1e-24);
        let g = ck.backward(&batch).unwrap();
        assert!(g.flat().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn loss_matches_naive_recomputation() {
        let ck = checkpoint(Variant::AgeInput, 2, 5, 1e-2, 8);
        let samples = random_samples(10, 9);
        let batch = ck.encode(&samples).unwrap();
        // independent scalar re-implementation
        let naive = |s: &FlightSample| -> f64 {
            let mut h: Vec<f64> = ck
                .feature_list
                .iter()
                .zip(&ck.norm_stats.inputs)
                .map(|(f, st)| (f.value(s).unwrap() - st.mean) / st.std)
                .collect();
            for (li, l) in ck.params.layers.iter().enumerate() {
                let mut next = Vec::new();
                for o in 0..l.n_out {
                    let mut z = l.bias[o];
                    for j in 0..l.n_in {
                        z += l.weights[o * l.n_in + j] * h[j];
                    }
                    next.push(if li + 1 < ck.params.layers.len() { z.max(0.0) } else { z });
                }
                h = next;
            }
            (h[0] * ck.norm_stats.target.std + ck.norm_stats.target.mean).max(0.0)
        };
        let mut sse = 0.0;
        for s in &samples {
            sse += ((naive(s) - s.fuel_flow.unwrap()) / ck.norm_stats.target.std).powi(2);
        }
        let mut l2 = 0.0;
        for l in &ck.params.layers {
            for w in &l.weights {
                l2 += w * w;
            }
        }
        let expect = sse / 10.0 + 1e-2 * l2;
        assert!((ck.loss(&batch).unwrap() - expect).abs() <= 1e-12 * expect.max(1.0));
    }

    #[test]
    fn age_gradient_negative_when_old_aircraft_underpredicted() {
        let ck = checkpoint(Variant::InductiveBias, 1, 4, 0.0, 21);
        let mut ck = ck;
        ck.params.age_coeff = Some(0.0);
        let samples = random_samples(32, 22);
        let mut batch = ck.encode(&samples).unwrap();
        let preds = ck.predict_encoded(&batch);
        prop_assume_positive(&preds);
        // observed fuel grows with age beyond the age-neutral prediction
        batch.targets = preds
            .iter()
            .zip(&batch.ages)
            .map(|(p, a)| p * (1.0 + 0.05 * (a + 1.0f64).ln()))
            .collect();
        let g = ck.backward(&batch).unwrap();
        assert!(g.age_coeff.unwrap() < 0.0);
        // and stepping a upward strictly lowers the loss
        let mut up = ck.clone();
        up.params.age_coeff = Some(0.01);
        assert!(up.loss(&batch).unwrap() < ck.loss(&batch).unwrap());
    }

    fn prop_assume_positive(preds: &[f64]) {
        assert!(preds.iter().all(|&p| p > 0.0), "construction needs positive predictions");
    }

    #[test]
    fn inductive_bias_is_multiplicative() {
        let ck = checkpoint(Variant::InductiveBias, 3, 8, 0.0, 31);
        let a = ck.age_coeff().unwrap();
        for s in random_samples(20, 32) {
            let y0 = ck.predict_at_age(&s, 0.0).unwrap();
            if y0 <= 0.0 {
                continue;
            }
            for age in [1.0, 7.5, 25.0] {
                let y = ck.predict_at_age(&s, age).unwrap();
                if y > 0.0 {
                    assert!((y / y0 - (1.0 + a * (age + 1.0f64).ln())).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let ck = checkpoint(Variant::InductiveBias, 2, 3, 1e-5, 41);
        let text = ck.to_json().unwrap();
        assert!(text.contains("\"version\": 1"));
        let back = MlpCheckpoint::from_json(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn checkpoint_mismatch_detected() {
        let ck = checkpoint(Variant::AgeBlind, 2, 3, 0.0, 42);
        let mut bad = ck.clone();
        bad.feature_list.push(Feature::Age);
        assert!(MlpCheckpoint::from_json(&bad.to_json().unwrap()).is_err());
        let mut bad = ck.clone();
        bad.params.age_coeff = Some(0.1);
        assert!(MlpCheckpoint::from_json(&bad.to_json().unwrap()).is_err());
        let mut bad = ck.clone();
        bad.params.layers[1].weights.pop();
        assert!(MlpCheckpoint::from_json(&bad.to_json().unwrap()).is_err());
        let mut s = sample("A", "1", 0.0);
        s.dtas_dt = None;
        assert!(matches!(ck.forward(&s), Err(Error::MissingFeature(_))));
    }

    #[test]
    fn forward_is_deterministic_and_non_negative() {
        let ck = checkpoint(Variant::AgeInput, 3, 16, 0.0, 51);
        let samples = random_samples(200, 52);
        let a = ck.predict_all(&samples).unwrap();
        assert_eq!(a, ck.predict_all(&samples).unwrap());
        assert!(a.iter().all(|&y| y >= 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn gradient_check_random_architectures(depth in 1usize..=3, width in 1usize..=16, v in 0usize..3, seed in 0u64..1000) {
            let variant = [Variant::AgeBlind, Variant::AgeInput, Variant::InductiveBias][v];
            let ck = checkpoint(variant, depth, width, 1e-4, seed);
            let batch = ck.encode(&random_samples(16, seed + 7)).unwrap();
            gradient_check(&ck, &batch);
        }
    }
}

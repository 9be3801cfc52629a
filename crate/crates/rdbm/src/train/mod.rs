//! Desk-scale training loop.
//!
//! Per iteration: draw (clean, degraded) pairs, a step index uniform in
//! 1..=N and fresh per-pixel Gaussian noise; build the forward state at
//! that step; descend the L1 distance between the target pi (.) eps and
//! the predictor output. Everything is keyed off the config seed, so two
//! identical runs produce bitwise-identical parameters.

mod dataset;
mod net;
mod optim;

pub use dataset::{make_toy_dataset, streak_mask, DegradationKind, DegradationSpec};
pub use net::{
    backward_raw, predictor_forward, read_model, time_embedding, write_model, DenoiserParams,
    DenseLayer, Grads,
};
pub use optim::{adam_step, AdamState};

use serde::{Deserialize, Serialize};

use crate::bridge::{compute_coefficients, variant_pi, BridgeCoefficients, BridgeVariant};
use crate::error::{RdbmError, Result};
use crate::rng::Stream;
use crate::schedule::{build_table, ScheduleSpec};
use crate::tensor::TensorGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    L1,
    ElboWeightedL2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_loss_mode")]
    pub loss_mode: LossMode,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_dataset_size")]
    pub dataset_size: usize,
}

fn default_batch() -> usize {
    32
}
fn default_iterations() -> usize {
    5000
}
fn default_lr() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_loss_mode() -> LossMode {
    LossMode::L1
}
fn default_hidden() -> Vec<usize> {
    vec![128, 128]
}
fn default_embed_dim() -> usize {
    16
}
fn default_dataset_size() -> usize {
    256
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(RdbmError::InvalidConfig(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.iterations == 0 {
            return Err(RdbmError::InvalidConfig("iterations must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(RdbmError::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.dataset_size == 0 {
            return Err(RdbmError::InvalidConfig("dataset size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One prepared regression sample.
pub struct TrainSample {
    pub input: Vec<f64>,
    /// x_t - mu per pixel; the prediction wrapper reuses it.
    pub diff: Vec<f64>,
    /// Target pi (.) eps per pixel.
    pub target: Vec<f64>,
    pub step: usize,
}

/// Per-step weights of the optional squared-error mode; unit weights keep
/// it directly comparable with the L1 objective.
pub fn elbo_weight(_step: usize) -> f64 {
    1.0
}

/// Loss between a prediction and the pi (.) eps target.
pub fn loss(pred: &TensorGrid, pi: &TensorGrid, eps: &TensorGrid, mode: LossMode) -> Result<f64> {
    pred.same_shape(pi)?;
    pred.same_shape(eps)?;
    let n = pred.len() as f64;
    let mut acc = 0.0;
    for ((&p, &pv), &e) in pred
        .data()
        .iter()
        .zip(pi.data().iter())
        .zip(eps.data().iter())
    {
        let d = p - pv * e;
        acc += match mode {
            LossMode::L1 => d.abs(),
            LossMode::ElboWeightedL2 => elbo_weight(0) * d * d,
        };
    }
    Ok(acc / n)
}

/// Draws one training batch for the given iteration (deterministic in
/// (seed, iteration)): sample pair, step uniform in 1..=N, fresh noise,
/// state from the forward identity at the step's effective coefficients.
pub fn prepare_batch(
    dataset: &[(TensorGrid, TensorGrid)],
    coeffs: &BridgeCoefficients,
    variant: &BridgeVariant,
    params: &DenoiserParams,
    iteration: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<TrainSample>> {
    let n_steps = coeffs.n_cells();
    let mut stream = Stream::indexed(seed, "train.iter", iteration as u64);
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let (x0, mu) = &dataset[stream.next_index(dataset.len())];
        let i = 1 + stream.next_index(n_steps);
        let pi = variant_pi(variant, x0, mu)?;
        let (th, sg) = coeffs.step_coeffs(i);
        let pixels = x0.len();
        let mut eps = vec![0.0; pixels];
        stream.fill_normal(&mut eps);
        let mut diff = vec![0.0; pixels];
        let mut target = vec![0.0; pixels];
        let mut x_t = TensorGrid::zeros(x0.shape().to_vec());
        for k in 0..pixels {
            let (a, m, p) = (x0.data()[k], mu.data()[k], pi.data()[k]);
            let d = (a - m) * th + p * sg * eps[k];
            diff[k] = d;
            x_t.data_mut()[k] = m + d;
            target[k] = p * eps[k];
        }
        batch.push(TrainSample {
            input: params.assemble_input(&x_t, i, mu),
            diff,
            target,
            step: i,
        });
    }
    Ok(batch)
}

/// Mean loss over a prepared batch and its exact reverse-mode gradients.
///
/// The |.| subgradient at 0 is taken as 0.
pub fn loss_and_grads(
    params: &DenoiserParams,
    batch: &[TrainSample],
    mode: LossMode,
) -> Result<(f64, Grads)> {
    if batch.is_empty() {
        return Err(RdbmError::InvalidConfig("empty batch".into()));
    }
    let pixels = params.output_dim();
    let total = (batch.len() * pixels) as f64;
    let mut grads = Grads::zeros_like(params);
    let mut acc = 0.0;
    for sample in batch {
        let (activations, r_hat) = params.forward_raw(&sample.input);
        let (th, sg) = (
            params.step_theta[sample.step],
            params.step_sigma[sample.step],
        );
        let mut d_raw = vec![0.0; pixels];
        for k in 0..pixels {
            let pred = (sample.diff[k] - th * r_hat[k]) / sg;
            let resid = pred - sample.target[k];
            let (l, dpred) = match mode {
                LossMode::L1 => (resid.abs(), resid.signum() * f64::from(resid != 0.0)),
                LossMode::ElboWeightedL2 => {
                    let c = elbo_weight(sample.step);
                    (c * resid * resid, 2.0 * c * resid)
                }
            };
            acc += l;
            d_raw[k] = dpred / total * (-th / sg);
        }
        backward_raw(params, &activations, &d_raw, &mut grads);
    }
    Ok((acc / total, grads))
}

/// Gradients for a raw batch of (clean, degraded) pairs: draws the step
/// indices and noise from the stream, then differentiates the loss.
pub fn gradient(
    params: &DenoiserParams,
    pairs: &[(TensorGrid, TensorGrid)],
    coeffs: &BridgeCoefficients,
    variant: &BridgeVariant,
    mode: LossMode,
    stream_seed: u64,
    iteration: usize,
) -> Result<(f64, Grads)> {
    if pairs.is_empty() {
        return Err(RdbmError::InvalidConfig("empty batch".into()));
    }
    let batch = prepare_batch(
        pairs,
        coeffs,
        variant,
        params,
        iteration,
        pairs.len(),
        stream_seed,
    )?;
    loss_and_grads(params, &batch, mode)
}

pub struct TrainOutcome {
    pub params: DenoiserParams,
    /// (iteration, loss), recorded at iteration 1 and every 50th after.
    pub trace: Vec<(usize, f64)>,
}

/// Runs the full loop; bitwise-deterministic for a fixed config.
pub fn train(
    config: &TrainConfig,
    schedule: &ScheduleSpec,
    dataset: &[(TensorGrid, TensorGrid)],
    variant: &BridgeVariant,
) -> Result<TrainOutcome> {
    config.validate()?;
    schedule.validate()?;
    if dataset.is_empty() {
        return Err(RdbmError::InvalidConfig("empty dataset".into()));
    }
    let image_size = dataset[0].0.shape()[0];
    let table = build_table(schedule)?;
    let coeffs = compute_coefficients(&table, schedule.lambda)?;
    let mut params = DenoiserParams::init(
        image_size,
        &config.hidden,
        config.embed_dim,
        &coeffs,
        config.seed,
    )?;
    let mut state = AdamState::zeros_like(&params);
    let mut trace = Vec::new();
    for iteration in 1..=config.iterations {
        let batch = prepare_batch(
            dataset,
            &coeffs,
            variant,
            &params,
            iteration,
            config.batch_size,
            config.seed,
        )?;
        let (loss_value, grads) = loss_and_grads(&params, &batch, config.loss_mode)?;
        if !loss_value.is_finite() {
            return Err(RdbmError::Diverged { iteration, loss: loss_value });
        }
        adam_step(&mut params, &grads, &mut state, config);
        if iteration == 1 || iteration % 50 == 0 {
            trace.push((iteration, loss_value));
        }
    }
    if !params.all_finite() {
        return Err(RdbmError::Diverged {
            iteration: config.iterations,
            loss: f64::NAN,
        });
    }
    Ok(TrainOutcome { params, trace })
}

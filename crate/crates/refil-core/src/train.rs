//! Supervised training of split models, with an optional signal-to-noise
//! regularizer on the client prefix.
//!
//! The SNR term is trace(J^T J) / (z^T z) of the client at each training
//! input: the ratio of leakage mass to signal mass. Driving it down lets the
//! same leakage target be met with noise that is smaller relative to the
//! activation, which is where the utility gain comes from.
//!
//! Differentiating trace(J^T J) in the parameters would need second-order
//! sweeps, so the trace is estimated with Rademacher probes pushed through
//! central differences of the forward map,
//! ||(f(x + eps v) - f(x - eps v)) / (2 eps)||^2, which ordinary reverse
//! mode differentiates through two forward passes (bias O(eps^2)).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::roc_auc;
use crate::model::{Model, SplitModel};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskLoss {
    CrossEntropy,
    BinaryCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub task_loss: TaskLoss,
    /// Weight of the SNR term; 0 disables it.
    pub snr_lambda: f64,
    /// Rademacher probes per example for the SNR trace estimate.
    pub snr_probe_count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    Class(usize),
    Binary(bool),
}

#[derive(Debug, Clone)]
pub struct Example {
    pub input: Tensor,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub task_loss: f64,
    /// Accuracy for cross-entropy, ROC-AUC for binary cross-entropy,
    /// measured on the training stream.
    pub task_metric: f64,
    pub mean_snr_loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    /// Times the SNR denominator had to be clamped at its floor.
    pub snr_clamp_warnings: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,task_loss,task_metric,mean_snr_loss\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                e.epoch, e.task_loss, e.task_metric, e.mean_snr_loss
            ));
        }
        out
    }
}

// ---- Task losses --------------------------------------------------------

/// Loss value, output cotangent, and the scalar used for the epoch metric.
fn task_loss_grad(kind: TaskLoss, output: &Tensor, label: &Label) -> Result<(f64, Tensor, f64)> {
    match (kind, label) {
        (TaskLoss::CrossEntropy, Label::Class(y)) => {
            let logits = output.data();
            if *y >= logits.len() {
                return Err(Error::InvalidArgument(format!(
                    "class {y} out of range for {} logits",
                    logits.len()
                )));
            }
            let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let sum_exp: f64 = logits.iter().map(|&v| ((v as f64) - max).exp()).sum();
            let loss = -(logits[*y] as f64 - max - sum_exp.ln());
            let mut grad = Vec::with_capacity(logits.len());
            let mut argmax = 0usize;
            for (i, &v) in logits.iter().enumerate() {
                let p = ((v as f64 - max).exp() / sum_exp) as f32;
                grad.push(if i == *y { p - 1.0 } else { p });
                if logits[i] > logits[argmax] {
                    argmax = i;
                }
            }
            let hit = if argmax == *y { 1.0 } else { 0.0 };
            Ok((loss, Tensor::new(output.shape().to_vec(), grad)?, hit))
        }
        (TaskLoss::BinaryCrossEntropy, Label::Binary(y)) => {
            if output.len() != 1 {
                return Err(Error::InvalidArgument(format!(
                    "binary cross entropy expects a single logit, got {:?}",
                    output.shape()
                )));
            }
            let o = output.data()[0] as f64;
            let yv = if *y { 1.0 } else { 0.0 };
            // softplus(o) - y*o, computed stably
            let loss = o.max(0.0) + (1.0 + (-o.abs()).exp()).ln() - yv * o;
            let sig = 1.0 / (1.0 + (-o).exp());
            let grad = Tensor::new(output.shape().to_vec(), vec![(sig - yv) as f32])?;
            Ok((loss, grad, sig))
        }
        _ => Err(Error::InvalidArgument(
            "label kind does not match the configured task loss".into(),
        )),
    }
}

// ---- SNR loss -----------------------------------------------------------

pub const SNR_EPS_Z: f64 = 1e-8;
pub const SNR_FD_STEP: f32 = 1e-3;

#[derive(Debug, Clone, Copy)]
pub struct SnrEval {
    pub value: f64,
    pub trace_estimate: f64,
    pub signal: f64,
    pub clamped: bool,
}

/// Estimate of trace(J^T J) / max(z^T z, eps_z) for `client` at `x`.
pub fn snr_loss(client: &Model, x: &Tensor, probes: usize, rng: &mut SeededRng) -> Result<f64> {
    Ok(snr_eval(client, x, probes, rng)?.value)
}

pub fn snr_eval(client: &Model, x: &Tensor, probes: usize, rng: &mut SeededRng) -> Result<SnrEval> {
    snr_internal(client, x, probes, rng, false).map(|(eval, _)| eval)
}

/// SNR value plus its parameter cotangents (aligned with `client` layers).
pub fn snr_eval_with_grads(
    client: &Model,
    x: &Tensor,
    probes: usize,
    rng: &mut SeededRng,
) -> Result<(SnrEval, ParamGrads)> {
    let (eval, grads) = snr_internal(client, x, probes, rng, true)?;
    Ok((eval, grads.expect("grads requested")))
}

fn snr_internal(
    client: &Model,
    x: &Tensor,
    probes: usize,
    rng: &mut SeededRng,
    want_grads: bool,
) -> Result<(SnrEval, Option<ParamGrads>)> {
    if probes == 0 {
        return Err(Error::InvalidArgument("snr probe count must be >= 1".into()));
    }
    let acts = client.activations(x)?;
    let z = acts.last().expect("non-empty").clone();
    let signal_raw = z.norm_sq();
    let clamped = signal_raw < SNR_EPS_Z;
    let signal = signal_raw.max(SNR_EPS_Z);

    let d = client.input_dim();
    let eps = SNR_FD_STEP;
    let mut trace_acc = 0.0f64;
    let mut grads = if want_grads {
        Some(zero_grads(client))
    } else {
        None
    };

    for _ in 0..probes {
        let v: Vec<f32> = (0..d).map(|_| rng.rademacher()).collect();
        let v = Tensor::new(client.input_shape().to_vec(), v)?;
        let mut xp = x.clone();
        xp.axpy(eps, &v)?;
        let mut xm = x.clone();
        xm.axpy(-eps, &v)?;
        let acts_p = client.activations(&xp)?;
        let acts_m = client.activations(&xm)?;
        let g = acts_p
            .last()
            .expect("non-empty")
            .sub(acts_m.last().expect("non-empty"))?
            .scale(1.0 / (2.0 * eps));
        trace_acc += g.norm_sq();

        if let Some(acc) = grads.as_mut() {
            // d||g||^2/dtheta = (1/eps) [vjp_theta(x+, g) - vjp_theta(x-, g)]
            let gp = client.backward(&acts_p, &g)?.param_grads;
            let gm = client.backward(&acts_m, &g)?.param_grads;
            let scale = 1.0 / (probes as f32 * eps * signal as f32);
            add_grads(acc, &gp, scale);
            add_grads(acc, &gm, -scale);
        }
    }
    let trace_estimate = trace_acc / probes as f64;
    let value = trace_estimate / signal;

    if let Some(acc) = grads.as_mut() {
        if !clamped {
            // quotient rule: -(T/S^2) * d(z^T z)/dtheta, with dS/dtheta = 2 vjp(x, z)
            let gz = client.backward(&acts, &z)?.param_grads;
            let scale = (-2.0 * trace_estimate / (signal * signal)) as f32;
            add_grads(acc, &gz, scale);
        }
    }

    Ok((
        SnrEval {
            value,
            trace_estimate,
            signal: signal_raw,
            clamped,
        },
        grads,
    ))
}

// ---- Gradient bookkeeping ----------------------------------------------

/// Per-layer, per-parameter cotangent tensors, aligned with a model's
/// layer list and each layer's `params()` order.
pub type ParamGrads = Vec<Vec<Tensor>>;

pub fn zero_grads(model: &Model) -> ParamGrads {
    model
        .params()
        .iter()
        .map(|ps| ps.iter().map(|p| Tensor::zeros(p.shape())).collect())
        .collect()
}

pub fn add_grads(acc: &mut ParamGrads, other: &ParamGrads, scale: f32) {
    for (a_layer, o_layer) in acc.iter_mut().zip(other) {
        for (a, o) in a_layer.iter_mut().zip(o_layer) {
            a.axpy(scale, o).expect("aligned gradient shapes");
        }
    }
}

struct Optimizer {
    kind: OptimizerKind,
    first: ParamGrads,
    second: ParamGrads,
    step: usize,
}

impl Optimizer {
    fn new(kind: OptimizerKind, model: &Model) -> Optimizer {
        Optimizer {
            kind,
            first: zero_grads(model),
            second: zero_grads(model),
            step: 0,
        }
    }

    fn apply(&mut self, model: &mut Model, grads: &ParamGrads) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd { lr, momentum } => {
                for (li, layer) in model.layers_mut().iter_mut().enumerate() {
                    for (pi, p) in layer.params_mut().into_iter().enumerate() {
                        let vel = &mut self.first[li][pi];
                        for ((v, &g), w) in vel
                            .data_mut()
                            .iter_mut()
                            .zip(grads[li][pi].data())
                            .zip(p.data_mut())
                        {
                            *v = momentum as f32 * *v + g;
                            *w -= lr as f32 * *v;
                        }
                    }
                }
            }
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.step as i32);
                let bc2 = 1.0 - beta2.powi(self.step as i32);
                for (li, layer) in model.layers_mut().iter_mut().enumerate() {
                    for (pi, p) in layer.params_mut().into_iter().enumerate() {
                        let m = &mut self.first[li][pi];
                        let v = &mut self.second[li][pi];
                        for (((mi, vi), &g), w) in m
                            .data_mut()
                            .iter_mut()
                            .zip(v.data_mut())
                            .zip(grads[li][pi].data())
                            .zip(p.data_mut())
                        {
                            *mi = beta1 as f32 * *mi + (1.0 - beta1 as f32) * g;
                            *vi = beta2 as f32 * *vi + (1.0 - beta2 as f32) * g * g;
                            let mhat = *mi as f64 / bc1;
                            let vhat = *vi as f64 / bc2;
                            *w -= (lr * mhat / (vhat.sqrt() + eps)) as f32;
                        }
                    }
                }
            }
        }
    }
}

// ---- Training loop ------------------------------------------------------

struct ExampleGrad {
    loss: f64,
    metric: f64,
    grads: ParamGrads,
    snr_value: f64,
    snr_grads: Option<ParamGrads>,
    snr_clamped: bool,
}

/// Minimize task loss + snr_lambda * snr_loss over the full split model.
/// Deterministic for a fixed config seed: example order, probe draws and
/// gradient reduction order are all derived, and per-example work is
/// reduced in index order regardless of thread scheduling.
pub fn train(split: &mut SplitModel, data: &[Example], cfg: &TrainConfig) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    if cfg.snr_lambda < 0.0 {
        return Err(Error::InvalidArgument("snr_lambda must be >= 0".into()));
    }
    if cfg.snr_lambda > 0.0 && cfg.snr_probe_count == 0 {
        return Err(Error::InvalidArgument(
            "snr_lambda > 0 needs snr_probe_count >= 1".into(),
        ));
    }

    let mut model = split.full();
    let split_index = split.split_index();
    let root = SeededRng::new(cfg.seed);
    let mut optimizer = Optimizer::new(cfg.optimizer, &model);
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        root.derive(&[1, epoch as u64]).shuffle(&mut order);

        let mut loss_sum = 0.0f64;
        let mut snr_sum = 0.0f64;
        let mut snr_count = 0usize;
        let mut bce_scores: Vec<(f64, bool)> = Vec::new();
        let mut hits = 0.0f64;
        let mut seen = 0usize;

        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            // Client prefix changes every optimizer step; rebuild per batch.
            let snr_ctx = if cfg.snr_lambda > 0.0 {
                let client = model.prefix(split_index)?;
                let (embed, diff) = client.split_embedding_prefix()?;
                let offset = client.layers().len() - diff.layers().len();
                Some((embed, diff, offset))
            } else {
                None
            };

            let results: Vec<Result<ExampleGrad>> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &ei)| {
                    let ex = &data[ei];
                    let acts = model.activations(&ex.input)?;
                    let output = acts.last().expect("non-empty");
                    let (loss, dout, metric) = task_loss_grad(cfg.task_loss, output, &ex.label)?;
                    let grads = model.backward(&acts, &dout)?.param_grads;

                    let (snr_value, snr_grads, snr_clamped) = match &snr_ctx {
                        Some((embed, diff, _)) => {
                            let x_diff = match embed {
                                Some(prefix) => prefix.forward(&ex.input)?,
                                None => ex.input.clone(),
                            };
                            let mut rng = root.derive(&[
                                2,
                                epoch as u64,
                                batch_idx as u64,
                                k as u64,
                            ]);
                            let (eval, g) = snr_eval_with_grads(
                                diff,
                                &x_diff,
                                cfg.snr_probe_count,
                                &mut rng,
                            )?;
                            (eval.value, Some(g), eval.clamped)
                        }
                        None => (0.0, None, false),
                    };
                    Ok(ExampleGrad {
                        loss,
                        metric,
                        grads,
                        snr_value,
                        snr_grads,
                        snr_clamped,
                    })
                })
                .collect();

            let mut batch_grads = zero_grads(&model);
            let inv = 1.0 / batch.len() as f32;
            let mut batch_loss = 0.0f64;
            for (k, res) in results.into_iter().enumerate() {
                let r = res?;
                batch_loss += r.loss + cfg.snr_lambda * r.snr_value;
                loss_sum += r.loss;
                add_grads(&mut batch_grads, &r.grads, inv);
                if let Some(sg) = r.snr_grads {
                    let (_, _, offset) = snr_ctx.as_ref().expect("snr grads imply snr ctx");
                    for (di, tensors) in sg.into_iter().enumerate() {
                        for (pi, t) in tensors.into_iter().enumerate() {
                            batch_grads[offset + di][pi]
                                .axpy(cfg.snr_lambda as f32 * inv, &t)
                                .expect("aligned shapes");
                        }
                    }
                    snr_sum += r.snr_value;
                    snr_count += 1;
                }
                if r.snr_clamped {
                    log.snr_clamp_warnings += 1;
                }
                match cfg.task_loss {
                    TaskLoss::CrossEntropy => hits += r.metric,
                    TaskLoss::BinaryCrossEntropy => {
                        let Label::Binary(y) = data[batch[k]].label else {
                            unreachable!("validated by task_loss_grad")
                        };
                        bce_scores.push((r.metric, y));
                    }
                }
                seen += 1;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            optimizer.apply(&mut model, &batch_grads);
        }

        let task_metric = match cfg.task_loss {
            TaskLoss::CrossEntropy => hits / seen as f64,
            TaskLoss::BinaryCrossEntropy => {
                let scores: Vec<f64> = bce_scores.iter().map(|(s, _)| *s).collect();
                let labels: Vec<bool> = bce_scores.iter().map(|(_, l)| *l).collect();
                roc_auc(&scores, &labels)
            }
        };
        log.epochs.push(EpochStats {
            epoch,
            task_loss: loss_sum / seen as f64,
            task_metric,
            mean_snr_loss: if snr_count > 0 {
                snr_sum / snr_count as f64
            } else {
                0.0
            },
        });
    }

    *split = split.with_layers(model.layers().to_vec(), split_index)?;
    Ok(log)
}

/// Clean-forward accuracy: argmax for multi-class, 0.5 threshold for binary.
pub fn evaluate_accuracy(model: &Model, loss: TaskLoss, data: &[Example]) -> Result<f64> {
    let outputs: Vec<Result<f64>> = data
        .par_iter()
        .map(|ex| {
            let out = model.forward(&ex.input)?;
            classify_hit(loss, &out, &ex.label)
        })
        .collect();
    let mut hits = 0.0;
    for o in outputs {
        hits += o?;
    }
    Ok(hits / data.len() as f64)
}

pub fn classify_hit(loss: TaskLoss, output: &Tensor, label: &Label) -> Result<f64> {
    match (loss, label) {
        (TaskLoss::CrossEntropy, Label::Class(y)) => {
            let mut argmax = 0usize;
            for (i, &v) in output.data().iter().enumerate() {
                if v > output.data()[argmax] {
                    argmax = i;
                }
            }
            Ok(if argmax == *y { 1.0 } else { 0.0 })
        }
        (TaskLoss::BinaryCrossEntropy, Label::Binary(y)) => {
            let pred = output.data()[0] > 0.0;
            Ok(if pred == *y { 1.0 } else { 0.0 })
        }
        _ => Err(Error::InvalidArgument(
            "label kind does not match the task loss".into(),
        )),
    }
}

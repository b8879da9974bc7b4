//! Input reconstruction attacks against a noised split activation.
//!
//! The attacker sees the released activation z', the client model, and the
//! noise scale — exactly what an honest-but-curious server holds — and
//! gradient-descends a candidate input x0 to minimize
//! ||z' - M(x0)||^2 (+ lambda * TV(x0) for the image-prior variant).
//! For linear clients the plain objective is convex and the resulting
//! estimator is unbiased, which is the regime where the 1/dFIL error floor
//! applies.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::model::Model;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AttackMethod {
    /// Pure activation matching; unbiased on linear clients.
    Unbiased,
    /// Activation matching plus lambda * total variation of the candidate.
    TvPrior { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AttackInit {
    Zeros,
    GaussianRandom { seed: u64, sigma: f64 },
}

/// Adam hyperparameters for the attack optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub method: AttackMethod,
    pub optimizer: AdamParams,
    pub iterations: usize,
    pub init: AttackInit,
    pub restarts: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            method: AttackMethod::Unbiased,
            optimizer: AdamParams::default(),
            iterations: 5000,
            init: AttackInit::GaussianRandom {
                seed: 0,
                sigma: 0.5,
            },
            restarts: 3,
        }
    }
}

impl AttackConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.restarts == 0 {
            return Err(Error::InvalidArgument(
                "attack needs iterations >= 1 and restarts >= 1".into(),
            ));
        }
        if let AttackMethod::TvPrior { lambda } = self.method {
            if lambda < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "tv lambda must be >= 0, got {lambda}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub x_hat: Tensor,
    /// Objective value at each iteration of the winning restart.
    pub objective_trace: Vec<f64>,
    /// Populated when the true input was supplied.
    pub mse: Option<f64>,
    /// Populated for image-shaped truth large enough for the SSIM window.
    pub ssim: Option<f64>,
    pub elapsed: std::time::Duration,
}

/// Reconstruct the client input behind `z_noised`. Runs `restarts`
/// independent descents and returns the candidate with the lowest final
/// objective. Restarts that go non-finite are discarded; if every restart
/// does, the attack reports a numerical failure.
pub fn reconstruct(
    z_noised: &Tensor,
    client: &Model,
    cfg: &AttackConfig,
    truth: Option<&Tensor>,
) -> Result<AttackResult> {
    cfg.validate()?;
    z_noised.expect_shape(client.output_shape(), "attack target activation")?;
    let started = Instant::now();

    let mut best: Option<(f64, Tensor, Vec<f64>)> = None;
    for restart in 0..cfg.restarts {
        match descend(z_noised, client, cfg, restart as u64) {
            Ok((obj, x, trace)) => {
                if best.as_ref().map_or(true, |(b, _, _)| obj < *b) {
                    best = Some((obj, x, trace));
                }
            }
            Err(e) if e.is_numerical() => continue,
            Err(e) => return Err(e),
        }
    }
    let (_, x_hat, objective_trace) = best.ok_or(Error::NonFinite {
        context: "attack objective (all restarts diverged)".into(),
    })?;

    let mse = truth.map(|t| metrics::mse(&x_hat, t)).transpose()?;
    let ssim = match truth {
        Some(t) if t.rank() == 3 || t.rank() == 2 => metrics::ssim(&x_hat, t, 1.0).ok(),
        _ => None,
    };
    Ok(AttackResult {
        x_hat,
        objective_trace,
        mse,
        ssim,
        elapsed: started.elapsed(),
    })
}

fn descend(
    z_noised: &Tensor,
    client: &Model,
    cfg: &AttackConfig,
    restart: u64,
) -> Result<(f64, Tensor, Vec<f64>)> {
    let shape = client.input_shape().to_vec();
    let d = client.input_dim();
    let mut x = match cfg.init {
        AttackInit::Zeros => Tensor::zeros(&shape),
        AttackInit::GaussianRandom { seed, sigma } => {
            let mut rng = SeededRng::new(seed).derive(&[restart]);
            Tensor::new(
                shape.clone(),
                (0..d).map(|_| sigma as f32 * rng.normal_f32()).collect(),
            )?
        }
    };

    let opt = cfg.optimizer;
    let mut m = vec![0.0f32; d];
    let mut v = vec![0.0f32; d];
    let mut trace = Vec::with_capacity(cfg.iterations);
    // Adam with a fixed step hovers around the optimum, so keep the best
    // iterate seen rather than whatever the last step landed on.
    let mut best: Option<(f64, Tensor)> = None;

    for step in 1..=cfg.iterations {
        let lin = client.linearize(&x)?;
        let residual = lin.output().sub(z_noised)?;
        let mut objective = residual.norm_sq();
        let mut grad = lin.vjp(&residual.scale(2.0))?;
        if let AttackMethod::TvPrior { lambda } = cfg.method {
            objective += lambda * tv(&x)?;
            grad.axpy(lambda as f32, &tv_subgradient(&x)?)?;
        }
        if !objective.is_finite() {
            return Err(Error::NonFinite {
                context: format!("attack objective at iteration {step}"),
            });
        }
        trace.push(objective);
        if best.as_ref().map_or(true, |(b, _)| objective < *b) {
            best = Some((objective, x.clone()));
        }

        let bc1 = 1.0 - opt.beta1.powi(step as i32);
        let bc2 = 1.0 - opt.beta2.powi(step as i32);
        for ((xi, mi), (vi, &gi)) in x
            .data_mut()
            .iter_mut()
            .zip(&mut m)
            .zip(v.iter_mut().zip(grad.data()))
        {
            *mi = opt.beta1 as f32 * *mi + (1.0 - opt.beta1 as f32) * gi;
            *vi = opt.beta2 as f32 * *vi + (1.0 - opt.beta2 as f32) * gi * gi;
            let mhat = *mi as f64 / bc1;
            let vhat = *vi as f64 / bc2;
            *xi -= (opt.lr * mhat / (vhat.sqrt() + opt.eps)) as f32;
        }
    }

    let final_obj = {
        let out = client.forward(&x)?;
        let mut obj = out.sub(z_noised)?.norm_sq();
        if let AttackMethod::TvPrior { lambda } = cfg.method {
            obj += lambda * tv(&x)?;
        }
        obj
    };
    if final_obj.is_finite() && x.is_finite() {
        trace.push(final_obj);
        if best.as_ref().map_or(true, |(b, _)| final_obj < *b) {
            best = Some((final_obj, x));
        }
    }
    let (obj, x_best) = best.ok_or(Error::NonFinite {
        context: "attack result".into(),
    })?;
    if !x_best.is_finite() {
        return Err(Error::NonFinite {
            context: "attack result".into(),
        });
    }
    Ok((obj, x_best, trace))
}

/// Anisotropic total variation of a [c, h, w] image:
/// sum of |vertical differences| + |horizontal differences|.
pub fn tv(x: &Tensor) -> Result<f64> {
    let (c, h, w) = tv_dims(x)?;
    let mut total = 0.0f64;
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let v = x.at3(ch, y, xx) as f64;
                if y + 1 < h {
                    total += (x.at3(ch, y + 1, xx) as f64 - v).abs();
                }
                if xx + 1 < w {
                    total += (x.at3(ch, y, xx + 1) as f64 - v).abs();
                }
            }
        }
    }
    Ok(total)
}

/// Subgradient of [`tv`]; sign of each difference, 0 at exact ties.
pub fn tv_subgradient(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = tv_dims(x)?;
    let mut g = vec![0.0f32; x.len()];
    let sgn = |d: f32| -> f32 {
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let here = (ch * h + y) * w + xx;
                if y + 1 < h {
                    let below = (ch * h + y + 1) * w + xx;
                    let s = sgn(x.data()[below] - x.data()[here]);
                    g[below] += s;
                    g[here] -= s;
                }
                if xx + 1 < w {
                    let right = here + 1;
                    let s = sgn(x.data()[right] - x.data()[here]);
                    g[right] += s;
                    g[here] -= s;
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), g)
}

fn tv_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        other => Err(Error::InvalidArgument(format!(
            "tv expects a rank-3 [c,h,w] image, got {other:?}"
        ))),
    }
}

/// The row of `table` closest in squared distance to `emb_hat`; ties go to
/// the lowest index.
pub fn embedding_id_attack(emb_hat: &Tensor, table: &Tensor) -> Result<usize> {
    let ranked = embedding_id_ranking(emb_hat, table, 1)?;
    Ok(ranked[0])
}

/// The `k` nearest table rows in order of increasing squared distance
/// (ties by lower index first).
pub fn embedding_id_ranking(emb_hat: &Tensor, table: &Tensor, k: usize) -> Result<Vec<usize>> {
    if table.rank() != 2 || table.shape()[0] == 0 {
        return Err(Error::InvalidArgument(
            "embedding table must be a non-empty [rows, emb] tensor".into(),
        ));
    }
    let (rows, emb) = (table.shape()[0], table.shape()[1]);
    emb_hat.expect_shape(&[emb], "reconstructed embedding")?;
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = &table.data()[i * emb..(i + 1) * emb];
        let d: f64 = row
            .iter()
            .zip(emb_hat.data())
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        dists.push((d, i));
    }
    // Stable on distance then index: equal distances keep index order.
    dists.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1)));
    Ok(dists.into_iter().take(k.min(rows)).map(|(_, i)| i).collect())
}

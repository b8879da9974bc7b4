//! Fisher information leakage of a noised split layer, and noise
//! calibration against a leakage target.
//!
//! For the mechanism A(x) = M(x) + N(0, sigma^2 I), the Fisher information
//! matrix of the released activation is (1/sigma^2) J^T J with J the client
//! Jacobian at x. Its trace divided by the input dimension d — the diagonal
//! Fisher information leakage, dFIL — bounds any unbiased reconstruction:
//! the attacker's mean squared error per input dimension is at least
//! 1/dFIL. Calibrating sigma = sqrt(trace(J^T J) / (d * target)) therefore
//! pins the leakage to `target` exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jacobian::{trace_jtj_exact, trace_jtj_hutchinson};
use crate::model::Model;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// How trace(J^T J) is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    /// min(d, m) full sweeps; exact up to rounding.
    Exact,
    /// Hutchinson probing; unbiased, cost independent of min(d, m).
    Hutchinson { probes: usize },
}

impl Estimator {
    /// Exact while the cheaper sweep side stays small, stochastic beyond.
    pub fn auto(input_dim: usize, output_dim: usize) -> Estimator {
        if input_dim.min(output_dim) <= 4096 {
            Estimator::Exact
        } else {
            Estimator::Hutchinson { probes: 64 }
        }
    }
}

/// Configuration of the noised split-layer forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefilConfig {
    /// Leakage target; the reciprocal is the guaranteed per-dimension MSE
    /// floor for unbiased attacks.
    pub target_dfil: f64,
    pub estimator: Estimator,
    pub seed: u64,
    /// v1 always calibrates per example (the trace is input-dependent).
    pub per_example: bool,
}

impl RefilConfig {
    pub fn new(target_dfil: f64, estimator: Estimator, seed: u64) -> RefilConfig {
        RefilConfig {
            target_dfil,
            estimator,
            seed,
            per_example: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.target_dfil > 0.0) || !self.target_dfil.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "target dFIL must be positive and finite, got {}",
                self.target_dfil
            )));
        }
        if let Estimator::Hutchinson { probes } = self.estimator {
            if probes == 0 {
                return Err(Error::InvalidArgument(
                    "hutchinson probe count must be >= 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// The noised split activation together with what was enforced.
#[derive(Debug, Clone)]
pub struct NoisyActivation {
    pub z_noised: Tensor,
    pub sigma: f64,
    pub trace_jtj: f64,
    /// trace / (d * sigma^2); zero for degenerate (zero-trace) inputs.
    pub achieved_dfil: f64,
    pub input_dim: usize,
    /// Zero Jacobian at this input: no sigma can be calibrated, nothing
    /// leaks, and the caller must decide whether that is acceptable.
    pub degenerate: bool,
}

/// Calibration outcome: the noise scale for a leakage target.
#[derive(Debug, Clone, Copy)]
pub struct Calibration {
    pub sigma: f64,
    pub trace_jtj: f64,
    pub degenerate: bool,
}

pub fn trace_with_estimator(
    model: &Model,
    x: &Tensor,
    estimator: Estimator,
    rng: &mut SeededRng,
) -> Result<f64> {
    match estimator {
        Estimator::Exact => trace_jtj_exact(model, x),
        Estimator::Hutchinson { probes } => trace_jtj_hutchinson(model, x, probes, rng),
    }
}

/// Leakage of the mechanism M(x) + N(0, sigma^2): trace(J^T J) / (d sigma^2).
pub fn compute_dfil(
    model: &Model,
    x: &Tensor,
    sigma: f64,
    estimator: Estimator,
    rng: &mut SeededRng,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let trace = trace_with_estimator(model, x, estimator, rng)?;
    let d = model.input_dim() as f64;
    Ok(trace / (d * sigma * sigma))
}

/// Noise scale that makes the leakage equal `target_dfil` at this input:
/// sigma = sqrt(trace(J^T J) / (d * target)).
pub fn calibrate_sigma(
    model: &Model,
    x: &Tensor,
    target_dfil: f64,
    estimator: Estimator,
    rng: &mut SeededRng,
) -> Result<Calibration> {
    if !(target_dfil > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target dFIL must be positive, got {target_dfil}"
        )));
    }
    let trace = trace_with_estimator(model, x, estimator, rng)?;
    if trace == 0.0 {
        return Ok(Calibration {
            sigma: 0.0,
            trace_jtj: 0.0,
            degenerate: true,
        });
    }
    let d = model.input_dim() as f64;
    Ok(Calibration {
        sigma: (trace / (d * target_dfil)).sqrt(),
        trace_jtj: trace,
        degenerate: false,
    })
}

/// The noised split-layer forward pass: z' = M(x) + N(0, sigma^2 I) with
/// sigma calibrated per example so the achieved leakage equals the target.
pub fn refil_forward(
    model: &Model,
    x: &Tensor,
    cfg: &RefilConfig,
    rng: &mut SeededRng,
) -> Result<NoisyActivation> {
    cfg.validate()?;
    let z = model.forward(x)?;
    let mut est_rng = rng.derive(&[0x7472_6163_65]); // separate stream for probes
    let cal = calibrate_sigma(model, x, cfg.target_dfil, cfg.estimator, &mut est_rng)?;
    let d = model.input_dim();
    if cal.degenerate {
        return Ok(NoisyActivation {
            z_noised: z,
            sigma: 0.0,
            trace_jtj: 0.0,
            achieved_dfil: 0.0,
            input_dim: d,
            degenerate: true,
        });
    }
    let sigma = cal.sigma;
    let mut z_noised = z;
    for v in z_noised.data_mut() {
        *v += (sigma as f32) * rng.normal_f32();
    }
    z_noised.check_finite("noised activation")?;
    let achieved_dfil = cal.trace_jtj / (d as f64 * sigma * sigma);
    Ok(NoisyActivation {
        z_noised,
        sigma,
        trace_jtj: cal.trace_jtj,
        achieved_dfil,
        input_dim: d,
        degenerate: false,
    })
}

/// The per-dimension MSE floor for unbiased reconstruction: 1/dFIL.
pub fn reconstruction_error_bound(dfil: f64) -> Result<f64> {
    if !(dfil > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dFIL must be positive, got {dfil}"
        )));
    }
    Ok(1.0 / dfil)
}

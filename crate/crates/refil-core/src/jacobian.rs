//! Jacobian materialization and Frobenius-norm (trace of J^T J) estimation.
//!
//! Traces drive noise calibration, so they are computed per single input;
//! sweeps run in parallel but are reduced in index order, keeping results
//! identical across thread counts.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Default cap on materialized Jacobian entries (m * d).
pub const DEFAULT_JACOBIAN_CAP: usize = 1 << 22;

/// Materialize the m x d Jacobian at `x`, row i = e_i^T J.
pub fn full_jacobian(model: &Model, x: &Tensor, cap: usize) -> Result<Tensor> {
    let d = model.input_dim();
    let m = model.output_dim();
    let entries = m.saturating_mul(d);
    if entries > cap {
        return Err(Error::JacobianTooLarge { entries, cap });
    }
    let lin = model.linearize(x)?;
    let rows: Vec<Result<Tensor>> = (0..m)
        .into_par_iter()
        .map(|i| lin.vjp(&Tensor::basis(m, i).reshape(model.output_shape())?))
        .collect();
    let mut data = Vec::with_capacity(entries);
    for row in rows {
        data.extend_from_slice(row?.data());
    }
    Tensor::new(vec![m, d], data)
}

/// trace(J^T J) = ||J||_F^2, exactly, via min(d, m) linear sweeps: JVPs over
/// the input basis when d <= m, otherwise VJPs over the output basis.
/// Accumulation is in f64.
pub fn trace_jtj_exact(model: &Model, x: &Tensor) -> Result<f64> {
    let d = model.input_dim();
    let m = model.output_dim();
    let lin = model.linearize(x)?;
    let terms: Vec<Result<f64>> = if d <= m {
        (0..d)
            .into_par_iter()
            .map(|j| {
                let v = Tensor::basis(d, j).reshape(model.input_shape())?;
                Ok(lin.jvp(&v)?.norm_sq())
            })
            .collect()
    } else {
        (0..m)
            .into_par_iter()
            .map(|i| {
                let u = Tensor::basis(m, i).reshape(model.output_shape())?;
                Ok(lin.vjp(&u)?.norm_sq())
            })
            .collect()
    };
    let mut total = 0.0f64;
    for t in terms {
        total += t?;
    }
    Ok(total)
}

/// Hutchinson estimate of trace(J^T J): mean of ||J v||^2 over k Rademacher
/// probes. Unbiased, deterministic under a fixed rng.
pub fn trace_jtj_hutchinson(
    model: &Model,
    x: &Tensor,
    probes: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    if probes == 0 {
        return Err(Error::InvalidArgument(
            "hutchinson probe count must be >= 1".into(),
        ));
    }
    let d = model.input_dim();
    let lin = model.linearize(x)?;
    // Draw all probes up front so the stream does not depend on scheduling.
    let mut vs = Vec::with_capacity(probes);
    for _ in 0..probes {
        let data: Vec<f32> = (0..d).map(|_| rng.rademacher()).collect();
        vs.push(Tensor::new(model.input_shape().to_vec(), data)?);
    }
    let terms: Vec<Result<f64>> = vs
        .par_iter()
        .map(|v| Ok(lin.jvp(v)?.norm_sq()))
        .collect();
    let mut total = 0.0f64;
    for t in terms {
        total += t?;
    }
    Ok(total / probes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::Layer;
    use crate::tensor::Tensor;

    fn dense_1234() -> Model {
        let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(vec![0.0, 0.0]);
        Model::new(vec![Layer::dense(w, b).unwrap()], vec![2]).unwrap()
    }

    #[test]
    fn jacobian_of_linear_map_is_its_matrix() {
        let model = dense_1234();
        let x = Tensor::from_vec(vec![0.7, -0.1]);
        let jac = full_jacobian(&model, &x, DEFAULT_JACOBIAN_CAP).unwrap();
        assert_eq!(jac.shape(), &[2, 2]);
        assert_eq!(jac.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn jacobian_of_relu_is_activation_mask() {
        let model = Model::new(vec![Layer::Relu], vec![2]).unwrap();
        let x = Tensor::from_vec(vec![-1.0, 2.0]);
        let jac = full_jacobian(&model, &x, DEFAULT_JACOBIAN_CAP).unwrap();
        assert_eq!(jac.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn jacobian_cap_refuses_large_products() {
        let model = dense_1234();
        let x = Tensor::from_vec(vec![0.0, 0.0]);
        assert!(matches!(
            full_jacobian(&model, &x, 3),
            Err(Error::JacobianTooLarge { entries: 4, cap: 3 })
        ));
    }

    #[test]
    fn exact_trace_of_identity_is_dimension() {
        let model = Model::identity(vec![3]).unwrap();
        let x = Tensor::from_vec(vec![0.1, 0.2, 0.3]);
        assert_eq!(trace_jtj_exact(&model, &x).unwrap(), 3.0);
    }

    #[test]
    fn exact_trace_of_dense_is_squared_entries() {
        let model = dense_1234();
        let x = Tensor::from_vec(vec![1.0, 1.0]);
        let tr = trace_jtj_exact(&model, &x).unwrap();
        assert!((tr - 30.0).abs() < 1e-9, "1+4+9+16 = 30, got {tr}");
    }

    #[test]
    fn dead_relu_unit_has_zero_trace() {
        // M(x) = relu(2x) at x = -1: the unit is off, J = 0.
        let w = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        let model = Model::new(
            vec![
                Layer::dense(w, Tensor::from_vec(vec![0.0])).unwrap(),
                Layer::Relu,
            ],
            vec![1],
        )
        .unwrap();
        let x = Tensor::from_vec(vec![-1.0]);
        assert_eq!(trace_jtj_exact(&model, &x).unwrap(), 0.0);
    }

    #[test]
    fn hutchinson_on_identity_is_exactly_d() {
        // ||v||^2 = d for every Rademacher probe, so any k and seed land on d.
        let model = Model::identity(vec![5]).unwrap();
        let x = Tensor::from_vec(vec![0.0; 5]);
        for seed in [0u64, 1, 42] {
            let mut rng = SeededRng::new(seed);
            let est = trace_jtj_hutchinson(&model, &x, 3, &mut rng).unwrap();
            assert_eq!(est, 5.0);
        }
    }

    #[test]
    fn hutchinson_converges_to_exact_trace() {
        // diag(1, 2): trace(J^T J) = 1 + 4 = 5.
        let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let model = Model::new(
            vec![Layer::dense(w, Tensor::from_vec(vec![0.0, 0.0])).unwrap()],
            vec![2],
        )
        .unwrap();
        let x = Tensor::from_vec(vec![0.0, 0.0]);
        let exact = trace_jtj_exact(&model, &x).unwrap();
        assert!((exact - 5.0).abs() < 1e-9);
        let mut rng = SeededRng::new(42);
        let est = trace_jtj_hutchinson(&model, &x, 4000, &mut rng).unwrap();
        assert!(
            (est - exact).abs() / exact < 0.05,
            "estimate {est} vs exact {exact}"
        );
    }
}

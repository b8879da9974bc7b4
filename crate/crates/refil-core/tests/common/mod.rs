//! Shared oracles for integration tests. Everything here is independent of
//! the differentiation paths it is used to check: finite differences go
//! through `Model::forward` only, and the least-squares solver goes through
//! the materialized Jacobian plus dense linear algebra.

#![allow(dead_code)]

use refil_core::jacobian::full_jacobian;
use refil_core::layer::{init_conv_relu, init_dense, Layer};
use refil_core::model::Model;
use refil_core::rng::SeededRng;
use refil_core::tensor::Tensor;

pub const FD_STEP: f32 = 1e-3;

/// Central-difference directional derivative (f(x+eps v) - f(x-eps v))/2eps,
/// accumulated in f64 per output element.
pub fn central_diff_jvp(model: &Model, x: &Tensor, v: &Tensor, eps: f32) -> Vec<f64> {
    let mut xp = x.clone();
    xp.axpy(eps, v).unwrap();
    let mut xm = x.clone();
    xm.axpy(-eps, v).unwrap();
    let fp = model.forward(&xp).unwrap();
    let fm = model.forward(&xm).unwrap();
    fp.data()
        .iter()
        .zip(fm.data())
        .map(|(&p, &m)| (p as f64 - m as f64) / (2.0 * eps as f64))
        .collect()
}

/// Norm-relative disagreement between two vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-9)
}

pub fn random_tensor(shape: &[usize], scale: f32, rng: &mut SeededRng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.normal_f32()).collect()).unwrap()
}

/// Central differences are a valid derivative oracle only away from the
/// relu kink set: if any relu preactivation sits within the probe's reach
/// (|a| <= margin * eps * |tangent|), the quotient mixes the two linear
/// pieces and measures nothing. True when (x, v) is clear of that set.
pub fn fd_probe_is_valid(model: &Model, x: &Tensor, v: &Tensor, eps: f32) -> bool {
    use refil_core::layer::Layer as L;
    let margin = 1.5f32;
    for (k, layer) in model.layers().iter().enumerate() {
        if matches!(layer, L::Relu) {
            let prefix = model.prefix(k).unwrap();
            let preact = prefix.forward(x).unwrap();
            let tangent = prefix.jvp(x, v).unwrap();
            for (&a, &t) in preact.data().iter().zip(tangent.data()) {
                if a.abs() <= margin * eps * t.abs().max(1e-3) {
                    return false;
                }
            }
        }
    }
    true
}

/// Draw (x, v) pairs until the finite-difference precondition holds. The
/// probe is drawn at a scale well above the f32 rounding floor of the
/// quotient (the nets are piecewise linear, so away from kinks rounding is
/// the only error source).
pub fn fd_safe_point(model: &Model, eps: f32, rng: &mut SeededRng) -> (Tensor, Tensor) {
    for _ in 0..500 {
        let x = random_tensor(model.input_shape(), 0.8, rng);
        let v = random_tensor(model.input_shape(), 2.0, rng);
        if fd_probe_is_valid(model, &x, &v, eps) {
            return (x, v);
        }
    }
    panic!("could not find a kink-free probe point in 500 draws");
}

/// Random models sized for trace-estimator checks: d, m in [24, 64] with
/// no strong rank collapse, so a k-probe Hutchinson estimate carries its
/// nominal accuracy (relative std ~ sqrt(2/k) / sqrt(effective rank)).
pub fn random_trace_model(flavor: usize, rng: &mut SeededRng) -> Model {
    if flavor % 2 == 0 {
        let d = 24 + rng.below(41);
        let h = 24 + rng.below(25);
        let m = 24 + rng.below(41);
        Model::new(
            vec![
                init_dense(h, d, rng),
                Layer::Relu,
                init_dense(m, h, rng),
            ],
            vec![d],
        )
        .unwrap()
    } else {
        // conv stack over a small image: 3x4x4 = 48 inputs, c_out x 4 x 4 outputs
        let c_out = 2 + rng.below(3);
        Model::new(
            vec![
                init_conv_relu(4, 3, 3, 1, 1, rng),
                Layer::Relu,
                init_conv_relu(c_out, 4, 3, 1, 1, rng),
            ],
            vec![3, 4, 4],
        )
        .unwrap()
    }
}

/// Small random models spanning the supported layer set. `flavor % 3`
/// selects MLP / CNN / post-embedding dense stacks.
pub fn random_small_model(flavor: usize, rng: &mut SeededRng) -> Model {
    match flavor % 3 {
        0 => {
            // MLP with 1-3 hidden relu layers
            let depth = 1 + rng.below(3);
            let mut dims = vec![2 + rng.below(8)];
            for _ in 0..depth {
                dims.push(2 + rng.below(10));
            }
            let mut layers = Vec::new();
            for i in 0..depth {
                layers.push(init_dense(dims[i + 1], dims[i], rng));
                if i + 1 < depth {
                    layers.push(Layer::Relu);
                }
            }
            Model::new(layers, vec![dims[0]]).unwrap()
        }
        1 => {
            // small CNN: standardize, 1-2 conv blocks, optional pool, head
            let c_in = 1 + rng.below(3);
            let hw = 6 + 2 * rng.below(3); // 6, 8, 10
            let c_mid = 2 + rng.below(4);
            let mut layers = vec![Layer::standardize(
                Tensor::filled(&[c_in], 0.4),
                Tensor::filled(&[c_in], 0.6),
            )
            .unwrap()];
            layers.push(init_conv_relu(c_mid, c_in, 3, 1, 1, rng));
            layers.push(Layer::Relu);
            if rng.below(2) == 0 {
                layers.push(init_conv_relu(c_mid, c_mid, 3, 1, 1, rng));
                layers.push(Layer::Relu);
            }
            layers.push(Layer::avg_pool(2).unwrap());
            layers.push(Layer::Flatten);
            let flat = c_mid * (hw / 2) * (hw / 2);
            layers.push(init_dense(1 + rng.below(6), flat, rng));
            Model::new(layers, vec![c_in, hw, hw]).unwrap()
        }
        _ => {
            // the differentiable part of an embedding model: dense stack on
            // a concatenated-embedding input
            let emb = 2 * (2 + rng.below(6));
            let hidden = 4 + rng.below(12);
            let layers = vec![
                init_dense(hidden, emb, rng),
                Layer::Relu,
                init_dense(2 + rng.below(4), hidden, rng),
            ];
            Model::new(layers, vec![emb]).unwrap()
        }
    }
}

/// Solve the symmetric positive-definite system A x = b by Cholesky.
pub fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                assert!(sum > 0.0, "matrix not positive definite");
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    // forward then backward substitution
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}

/// Closed-form least-squares reconstruction for a (possibly affine) client:
/// x_hat = argmin ||z - (W x + b)||^2 via the normal equations, with W taken
/// from the materialized Jacobian and b = f(0).
pub fn least_squares_reconstruct(client: &Model, z: &Tensor) -> Tensor {
    let d = client.input_dim();
    let m = client.output_dim();
    let zero = Tensor::zeros(client.input_shape());
    let bias = client.forward(&zero).unwrap();
    let jac = full_jacobian(client, &zero, usize::MAX).unwrap();
    // normal equations in f64
    let w = jac.data();
    let mut ata = vec![0.0f64; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = 0.0f64;
            for r in 0..m {
                sum += w[r * d + i] as f64 * w[r * d + j] as f64;
            }
            ata[i * d + j] = sum;
            ata[j * d + i] = sum;
        }
    }
    let mut atb = vec![0.0f64; d];
    for (r, (&zv, &bv)) in z.data().iter().zip(bias.data()).enumerate() {
        let resid = zv as f64 - bv as f64;
        for i in 0..d {
            atb[i] += w[r * d + i] as f64 * resid;
        }
    }
    let x = cholesky_solve(&ata, &atb, d);
    Tensor::new(
        client.input_shape().to_vec(),
        x.into_iter().map(|v| v as f32).collect(),
    )
    .unwrap()
}

//! The supported layer set and its forward / linearized maps.
//!
//! Every layer knows four things: how shapes compose, how to evaluate,
//! and how to push tangents (JVP) and pull cotangents (VJP) through the
//! point of evaluation. Parameterized layers additionally expose
//! parameter cotangents for training.
//!
//! ReLU uses derivative 0 at exactly 0, so JVP and VJP agree everywhere.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// y = W x + b with W of shape [m, n] and b of shape [m].
    Dense { weights: Tensor, bias: Tensor },
    /// 2-D convolution, kernels [out_ch, in_ch, kh, kw], bias [out_ch],
    /// zero padding. A 1x1 kernel realizes a channel-mixing map.
    Conv2d {
        kernels: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    Relu,
    /// Non-overlapping square window average; dims must divide evenly.
    AvgPool { window: usize },
    /// Reshape to rank 1.
    Flatten,
    /// Row lookup into a [vocab, emb] table. Input is a rank-1 tensor of
    /// integer-valued indices; output is [n, emb]. Not differentiable with
    /// respect to its input.
    EmbeddingLookup { table: Tensor },
    /// Lay the slices taken along `axis` out contiguously as one vector.
    /// For axis 0 this is the row-major flatten; other axes permute.
    Concat { axis: usize },
    /// y = (x - mean) / std, broadcast per leading-axis channel (or a
    /// single scalar pair). Not trainable.
    Standardize { mean: Tensor, std: Tensor },
}

impl Layer {
    pub fn dense(weights: Tensor, bias: Tensor) -> Result<Layer> {
        if weights.rank() != 2 {
            return Err(Error::InvalidArgument(format!(
                "dense weights must be rank 2, got {:?}",
                weights.shape()
            )));
        }
        if bias.shape() != [weights.shape()[0]] {
            return Err(Error::InvalidArgument(format!(
                "dense bias {:?} does not match weights {:?}",
                bias.shape(),
                weights.shape()
            )));
        }
        Ok(Layer::Dense { weights, bias })
    }

    pub fn conv2d(kernels: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Layer> {
        if kernels.rank() != 4 {
            return Err(Error::InvalidArgument(format!(
                "conv kernels must be rank 4, got {:?}",
                kernels.shape()
            )));
        }
        if bias.shape() != [kernels.shape()[0]] {
            return Err(Error::InvalidArgument(format!(
                "conv bias {:?} does not match kernels {:?}",
                bias.shape(),
                kernels.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be >= 1".into()));
        }
        Ok(Layer::Conv2d {
            kernels,
            bias,
            stride,
            padding,
        })
    }

    pub fn avg_pool(window: usize) -> Result<Layer> {
        if window == 0 {
            return Err(Error::InvalidArgument("pool window must be >= 1".into()));
        }
        Ok(Layer::AvgPool { window })
    }

    pub fn embedding(table: Tensor) -> Result<Layer> {
        if table.rank() != 2 {
            return Err(Error::InvalidArgument(format!(
                "embedding table must be rank 2, got {:?}",
                table.shape()
            )));
        }
        Ok(Layer::EmbeddingLookup { table })
    }

    pub fn standardize(mean: Tensor, std: Tensor) -> Result<Layer> {
        if mean.rank() != 1 || std.rank() != 1 || mean.len() != std.len() {
            return Err(Error::InvalidArgument(
                "standardize mean/std must be rank-1 tensors of equal length".into(),
            ));
        }
        if std.data().iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidArgument(
                "standardize std entries must be positive".into(),
            ));
        }
        Ok(Layer::Standardize { mean, std })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "Dense",
            Layer::Conv2d { .. } => "Conv2d",
            Layer::Relu => "Relu",
            Layer::AvgPool { .. } => "AvgPool",
            Layer::Flatten => "Flatten",
            Layer::EmbeddingLookup { .. } => "EmbeddingLookup",
            Layer::Concat { .. } => "Concat",
            Layer::Standardize { .. } => "Standardize",
        }
    }

    /// Shape of the output for a given input shape, or why it can't compose.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match self {
            Layer::Dense { weights, .. } => {
                let (m, n) = (weights.shape()[0], weights.shape()[1]);
                if input != [n] {
                    return Err(format!("dense expects input [{n}], got {input:?}"));
                }
                Ok(vec![m])
            }
            Layer::Conv2d {
                kernels,
                stride,
                padding,
                ..
            } => {
                let ks = kernels.shape();
                let (co, ci, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
                if input.len() != 3 {
                    return Err(format!("conv expects rank-3 [c,h,w] input, got {input:?}"));
                }
                let (c, h, w) = (input[0], input[1], input[2]);
                if c != ci {
                    return Err(format!("conv expects {ci} input channels, got {c}"));
                }
                if h + 2 * padding < kh || w + 2 * padding < kw {
                    return Err(format!(
                        "kernel {kh}x{kw} larger than padded input {}x{}",
                        h + 2 * padding,
                        w + 2 * padding
                    ));
                }
                let oh = (h + 2 * padding - kh) / stride + 1;
                let ow = (w + 2 * padding - kw) / stride + 1;
                Ok(vec![co, oh, ow])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::AvgPool { window } => {
                if input.len() != 3 {
                    return Err(format!("pool expects rank-3 [c,h,w] input, got {input:?}"));
                }
                let (c, h, w) = (input[0], input[1], input[2]);
                if h % window != 0 || w % window != 0 {
                    return Err(format!(
                        "pool window {window} does not divide spatial dims {h}x{w}"
                    ));
                }
                Ok(vec![c, h / window, w / window])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::EmbeddingLookup { table } => {
                if input.len() != 1 {
                    return Err(format!(
                        "embedding expects a rank-1 index tensor, got {input:?}"
                    ));
                }
                Ok(vec![input[0], table.shape()[1]])
            }
            Layer::Concat { axis } => {
                if *axis >= input.len() {
                    return Err(format!("concat axis {axis} out of range for {input:?}"));
                }
                Ok(vec![input.iter().product()])
            }
            Layer::Standardize { mean, .. } => {
                if mean.len() != 1 && (input.is_empty() || input[0] != mean.len()) {
                    return Err(format!(
                        "standardize has {} channels but input is {input:?}",
                        mean.len()
                    ));
                }
                Ok(input.to_vec())
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense { weights, bias } => dense_forward(weights, bias, x),
            Layer::Conv2d {
                kernels,
                bias,
                stride,
                padding,
            } => conv_forward(kernels, Some(bias), *stride, *padding, x),
            Layer::Relu => Ok(x.map(|v| if v > 0.0 { v } else { 0.0 })),
            Layer::AvgPool { window } => pool_forward(*window, x),
            Layer::Flatten => x.reshape(&[x.len()]),
            Layer::EmbeddingLookup { table } => embedding_forward(table, x),
            Layer::Concat { axis } => Ok(concat_apply(*axis, x)),
            Layer::Standardize { mean, std } => standardize_apply(mean, std, x, true),
        }
    }

    /// Tangent push-forward: d(layer)/dx at `x`, applied to `v`.
    pub fn input_jvp(&self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense { weights, .. } => dense_matvec(weights, v),
            Layer::Conv2d {
                kernels,
                stride,
                padding,
                ..
            } => conv_forward(kernels, None, *stride, *padding, v),
            Layer::Relu => v.zip_map(x, |t, xi| if xi > 0.0 { t } else { 0.0 }),
            Layer::AvgPool { window } => pool_forward(*window, v),
            Layer::Flatten => v.reshape(&[v.len()]),
            Layer::EmbeddingLookup { .. } => Err(Error::NotDifferentiable {
                op: "jvp",
                kind: self.kind_name(),
            }),
            Layer::Concat { axis } => Ok(concat_apply(*axis, v)),
            Layer::Standardize { mean, std } => standardize_apply(mean, std, v, false),
        }
    }

    /// Cotangent pull-back: u^T d(layer)/dx at `x`.
    pub fn input_vjp(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense { weights, .. } => dense_vjp(weights, u),
            Layer::Conv2d {
                kernels,
                stride,
                padding,
                ..
            } => conv_input_vjp(kernels, *stride, *padding, x.shape(), u),
            Layer::Relu => u.zip_map(x, |g, xi| if xi > 0.0 { g } else { 0.0 }),
            Layer::AvgPool { window } => pool_vjp(*window, x.shape(), u),
            Layer::Flatten => u.reshape(x.shape()),
            Layer::EmbeddingLookup { .. } => Err(Error::NotDifferentiable {
                op: "vjp",
                kind: self.kind_name(),
            }),
            Layer::Concat { axis } => Ok(concat_unapply(*axis, x.shape(), u)),
            Layer::Standardize { mean, std } => {
                standardize_apply(mean, std, u, false).and_then(|t| t.reshape(x.shape()))
            }
        }
    }

    /// Cotangents for this layer's trainable parameters, in the order of
    /// [`Layer::params`]. `None` for layers without trainable parameters.
    pub fn param_vjp(&self, x: &Tensor, u: &Tensor) -> Result<Option<Vec<Tensor>>> {
        match self {
            Layer::Dense { weights, .. } => {
                let (m, n) = (weights.shape()[0], weights.shape()[1]);
                let mut dw = vec![0.0f32; m * n];
                for i in 0..m {
                    let ui = u.data()[i];
                    if ui != 0.0 {
                        let row = &mut dw[i * n..(i + 1) * n];
                        for (d, &xj) in row.iter_mut().zip(x.data()) {
                            *d += ui * xj;
                        }
                    }
                }
                Ok(Some(vec![
                    Tensor::new(vec![m, n], dw)?,
                    u.reshape(&[m])?,
                ]))
            }
            Layer::Conv2d {
                kernels,
                stride,
                padding,
                ..
            } => conv_param_vjp(kernels, *stride, *padding, x, u).map(Some),
            Layer::EmbeddingLookup { table } => {
                let (vocab, emb) = (table.shape()[0], table.shape()[1]);
                let mut dt = vec![0.0f32; vocab * emb];
                for (row, &idx) in x.data().iter().enumerate() {
                    let i = idx as usize;
                    let dst = &mut dt[i * emb..(i + 1) * emb];
                    let src = &u.data()[row * emb..(row + 1) * emb];
                    for (d, &g) in dst.iter_mut().zip(src) {
                        *d += g;
                    }
                }
                Ok(Some(vec![Tensor::new(vec![vocab, emb], dt)?]))
            }
            _ => Ok(None),
        }
    }

    /// Trainable parameter tensors (standardization constants excluded).
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense { weights, bias } => vec![weights, bias],
            Layer::Conv2d { kernels, bias, .. } => vec![kernels, bias],
            Layer::EmbeddingLookup { table } => vec![table],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense { weights, bias } => vec![weights, bias],
            Layer::Conv2d { kernels, bias, .. } => vec![kernels, bias],
            Layer::EmbeddingLookup { table } => vec![table],
            _ => Vec::new(),
        }
    }
}

/// Uniform fan-in initializer: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn init_dense(out_dim: usize, in_dim: usize, rng: &mut SeededRng) -> Layer {
    let bound = 1.0 / (in_dim as f32).sqrt();
    let w: Vec<f32> = (0..out_dim * in_dim)
        .map(|_| rng.uniform_in(-bound, bound))
        .collect();
    let b: Vec<f32> = (0..out_dim).map(|_| rng.uniform_in(-bound, bound)).collect();
    Layer::Dense {
        weights: Tensor::new(vec![out_dim, in_dim], w).expect("shape consistent"),
        bias: Tensor::from_vec(b),
    }
}

/// Uniform fan-in initializer for convolutions (fan_in = in_ch * kh * kw).
pub fn init_conv(
    out_ch: usize,
    in_ch: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    rng: &mut SeededRng,
) -> Layer {
    let fan_in = in_ch * kernel * kernel;
    let bound = 1.0 / (fan_in as f32).sqrt();
    let k: Vec<f32> = (0..out_ch * fan_in)
        .map(|_| rng.uniform_in(-bound, bound))
        .collect();
    let b: Vec<f32> = (0..out_ch).map(|_| rng.uniform_in(-bound, bound)).collect();
    Layer::Conv2d {
        kernels: Tensor::new(vec![out_ch, in_ch, kernel, kernel], k).expect("shape consistent"),
        bias: Tensor::from_vec(b),
        stride,
        padding,
    }
}

/// He-scaled uniform initializer for convolutions feeding ReLUs:
/// U(-sqrt(6/fan_in), sqrt(6/fan_in)) keeps activation variance roughly
/// constant through deep conv/relu stacks.
pub fn init_conv_relu(
    out_ch: usize,
    in_ch: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    rng: &mut SeededRng,
) -> Layer {
    let fan_in = in_ch * kernel * kernel;
    let bound = (6.0 / fan_in as f32).sqrt();
    let k: Vec<f32> = (0..out_ch * fan_in)
        .map(|_| rng.uniform_in(-bound, bound))
        .collect();
    let b = vec![0.0f32; out_ch];
    Layer::Conv2d {
        kernels: Tensor::new(vec![out_ch, in_ch, kernel, kernel], k).expect("shape consistent"),
        bias: Tensor::from_vec(b),
        stride,
        padding,
    }
}

pub fn init_embedding(vocab: usize, emb: usize, rng: &mut SeededRng) -> Layer {
    let bound = 1.0 / (emb as f32).sqrt();
    let t: Vec<f32> = (0..vocab * emb)
        .map(|_| rng.uniform_in(-bound, bound))
        .collect();
    Layer::EmbeddingLookup {
        table: Tensor::new(vec![vocab, emb], t).expect("shape consistent"),
    }
}

// ---- Dense kernels ----------------------------------------------------

/// Dot with fixed 8-lane accumulation: reassociates explicitly so the
/// compiler can vectorize, while staying deterministic.
#[inline]
fn dot8(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (pa, pb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            lanes[l] += pa[l] * pb[l];
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    (((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])))
        + tail
}

fn dense_matvec(weights: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (m, n) = (weights.shape()[0], weights.shape()[1]);
    x.expect_shape(&[n], "dense input")?;
    let mut out = vec![0.0f32; m];
    for (i, row) in weights.data().chunks_exact(n).enumerate() {
        out[i] = dot8(row, x.data());
    }
    Tensor::new(vec![m], out)
}

fn dense_forward(weights: &Tensor, bias: &Tensor, x: &Tensor) -> Result<Tensor> {
    let mut y = dense_matvec(weights, x)?;
    for (o, &b) in y.data_mut().iter_mut().zip(bias.data()) {
        *o += b;
    }
    Ok(y)
}

/// W^T u without materializing the transpose.
fn dense_vjp(weights: &Tensor, u: &Tensor) -> Result<Tensor> {
    let (m, n) = (weights.shape()[0], weights.shape()[1]);
    u.expect_shape(&[m], "dense cotangent")?;
    let mut out = vec![0.0f32; n];
    for (row, &ui) in weights.data().chunks_exact(n).zip(u.data()) {
        if ui != 0.0 {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += ui * w;
            }
        }
    }
    Tensor::new(vec![n], out)
}

// ---- Conv kernels ------------------------------------------------------

/// Valid output column range [lo, hi) for a given kernel column at stride 1,
/// plus the matching input column offset.
#[inline]
fn conv_col_range(ow: usize, w: usize, kx: usize, padding: usize) -> (usize, usize) {
    let lo = padding.saturating_sub(kx);
    let hi = (w + padding - kx).min(ow);
    (lo, hi)
}

fn conv_forward(
    kernels: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
    x: &Tensor,
) -> Result<Tensor> {
    let ks = kernels.shape();
    let (co, ci, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
    if x.rank() != 3 || x.shape()[0] != ci {
        return Err(Error::ShapeMismatch {
            context: "conv input".into(),
            expected: vec![ci, 0, 0],
            actual: x.shape().to_vec(),
        });
    }
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0f32; co * oh * ow];

    for oc in 0..co {
        if let Some(b) = bias {
            let v = b.data()[oc];
            out[oc * oh * ow..(oc + 1) * oh * ow].fill(v);
        }
        for ic in 0..ci {
            let x_plane = &x.data()[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = kernels.data()[((oc * ci + ic) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    if stride == 1 {
                        let (lo, hi) = conv_col_range(ow, w, kx, padding);
                        if lo >= hi {
                            continue;
                        }
                        let ix0 = lo + kx - padding;
                        for oy in 0..oh {
                            let iy = oy + ky;
                            if iy < padding || iy - padding >= h {
                                continue;
                            }
                            let x_row = &x_plane[(iy - padding) * w + ix0..];
                            let o_row = &mut out[(oc * oh + oy) * ow + lo..(oc * oh + oy) * ow + hi];
                            for (o, &xv) in o_row.iter_mut().zip(x_row) {
                                *o += wv * xv;
                            }
                        }
                    } else {
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix as usize >= w {
                                    continue;
                                }
                                out[(oc * oh + oy) * ow + ox] +=
                                    wv * x_plane[iy as usize * w + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![co, oh, ow], out)
}

fn conv_input_vjp(
    kernels: &Tensor,
    stride: usize,
    padding: usize,
    in_shape: &[usize],
    u: &Tensor,
) -> Result<Tensor> {
    let ks = kernels.shape();
    let (co, ci, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
    let (h, w) = (in_shape[1], in_shape[2]);
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    u.expect_shape(&[co, oh, ow], "conv cotangent")?;
    let mut dx = vec![0.0f32; ci * h * w];

    for oc in 0..co {
        let u_plane = &u.data()[oc * oh * ow..(oc + 1) * oh * ow];
        for ic in 0..ci {
            let dx_plane = &mut dx[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = kernels.data()[((oc * ci + ic) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    if stride == 1 {
                        let (lo, hi) = conv_col_range(ow, w, kx, padding);
                        if lo >= hi {
                            continue;
                        }
                        let ix0 = lo + kx - padding;
                        for oy in 0..oh {
                            let iy = oy + ky;
                            if iy < padding || iy - padding >= h {
                                continue;
                            }
                            let u_row = &u_plane[oy * ow + lo..oy * ow + hi];
                            let dx_row = &mut dx_plane[(iy - padding) * w + ix0..];
                            for (d, &uv) in dx_row.iter_mut().zip(u_row) {
                                *d += wv * uv;
                            }
                        }
                    } else {
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix as usize >= w {
                                    continue;
                                }
                                dx_plane[iy as usize * w + ix as usize] += wv * u_plane[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![ci, h, w], dx)
}

fn conv_param_vjp(
    kernels: &Tensor,
    stride: usize,
    padding: usize,
    x: &Tensor,
    u: &Tensor,
) -> Result<Vec<Tensor>> {
    let ks = kernels.shape();
    let (co, ci, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let (oh, ow) = (u.shape()[1], u.shape()[2]);
    let mut dk = vec![0.0f32; co * ci * kh * kw];
    let mut db = vec![0.0f32; co];

    for oc in 0..co {
        let u_plane = &u.data()[oc * oh * ow..(oc + 1) * oh * ow];
        db[oc] = u_plane.iter().sum();
        for ic in 0..ci {
            let x_plane = &x.data()[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let mut acc = 0.0f32;
                    if stride == 1 {
                        let (lo, hi) = conv_col_range(ow, w, kx, padding);
                        if lo < hi {
                            let ix0 = lo + kx - padding;
                            for oy in 0..oh {
                                let iy = oy + ky;
                                if iy < padding || iy - padding >= h {
                                    continue;
                                }
                                let u_row = &u_plane[oy * ow + lo..oy * ow + hi];
                                let x_row = &x_plane[(iy - padding) * w + ix0..];
                                for (&uv, &xv) in u_row.iter().zip(x_row) {
                                    acc += uv * xv;
                                }
                            }
                        }
                    } else {
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix as usize >= w {
                                    continue;
                                }
                                acc += u_plane[oy * ow + ox] * x_plane[iy as usize * w + ix as usize];
                            }
                        }
                    }
                    dk[((oc * ci + ic) * kh + ky) * kw + kx] = acc;
                }
            }
        }
    }
    Ok(vec![
        Tensor::new(vec![co, ci, kh, kw], dk)?,
        Tensor::new(vec![co], db)?,
    ])
}

// ---- Pool / embedding / concat / standardize ---------------------------

fn pool_forward(window: usize, x: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 || x.shape()[1] % window != 0 || x.shape()[2] % window != 0 {
        return Err(Error::ShapeMismatch {
            context: format!("avg pool window {window}"),
            expected: vec![0, window, window],
            actual: x.shape().to_vec(),
        });
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h / window, w / window);
    let inv = 1.0 / (window * window) as f32;
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for dy in 0..window {
                    for dx in 0..window {
                        acc += x.at3(ch, oy * window + dy, ox * window + dx);
                    }
                }
                out[(ch * oh + oy) * ow + ox] = acc * inv;
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

fn pool_vjp(window: usize, in_shape: &[usize], u: &Tensor) -> Result<Tensor> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (h / window, w / window);
    u.expect_shape(&[c, oh, ow], "pool cotangent")?;
    let inv = 1.0 / (window * window) as f32;
    let mut dx = vec![0.0f32; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = u.data()[(ch * oh + oy) * ow + ox] * inv;
                for dy in 0..window {
                    for dx_ in 0..window {
                        dx[(ch * h + oy * window + dy) * w + ox * window + dx_] += g;
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, h, w], dx)
}

fn embedding_forward(table: &Tensor, x: &Tensor) -> Result<Tensor> {
    if x.rank() != 1 {
        return Err(Error::ShapeMismatch {
            context: "embedding indices".into(),
            expected: vec![0],
            actual: x.shape().to_vec(),
        });
    }
    let (vocab, emb) = (table.shape()[0], table.shape()[1]);
    let mut out = Vec::with_capacity(x.len() * emb);
    for &raw in x.data() {
        if raw.fract() != 0.0 || raw < 0.0 || raw as usize >= vocab {
            return Err(Error::InvalidArgument(format!(
                "embedding index {raw} outside [0, {vocab})"
            )));
        }
        let i = raw as usize;
        out.extend_from_slice(&table.data()[i * emb..(i + 1) * emb]);
    }
    Tensor::new(vec![x.len(), emb], out)
}

/// Slices along `axis` laid out contiguously; row-major order within each.
fn concat_apply(axis: usize, x: &Tensor) -> Tensor {
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    if axis == 0 {
        return Tensor::from_vec(x.data().to_vec());
    }
    let mut out = vec![0.0f32; x.len()];
    for a in 0..axis_len {
        for o in 0..outer {
            let src = (o * axis_len + a) * inner;
            let dst = (a * outer + o) * inner;
            out[dst..dst + inner].copy_from_slice(&x.data()[src..src + inner]);
        }
    }
    Tensor::from_vec(out)
}

fn concat_unapply(axis: usize, in_shape: &[usize], u: &Tensor) -> Tensor {
    let outer: usize = in_shape[..axis].iter().product();
    let axis_len = in_shape[axis];
    let inner: usize = in_shape[axis + 1..].iter().product();
    let mut out = vec![0.0f32; u.len()];
    if axis == 0 {
        out.copy_from_slice(u.data());
    } else {
        for a in 0..axis_len {
            for o in 0..outer {
                let dst = (o * axis_len + a) * inner;
                let src = (a * outer + o) * inner;
                out[dst..dst + inner].copy_from_slice(&u.data()[src..src + inner]);
            }
        }
    }
    Tensor::new(in_shape.to_vec(), out).expect("same element count")
}

fn standardize_apply(mean: &Tensor, std: &Tensor, x: &Tensor, shift: bool) -> Result<Tensor> {
    let channels = mean.len();
    if channels == 1 {
        let (m, s) = (mean.data()[0], std.data()[0]);
        return Ok(if shift {
            x.map(|v| (v - m) / s)
        } else {
            x.map(|v| v / s)
        });
    }
    if x.rank() == 0 || x.shape()[0] != channels {
        return Err(Error::ShapeMismatch {
            context: "standardize".into(),
            expected: vec![channels],
            actual: x.shape().to_vec(),
        });
    }
    let inner: usize = x.shape()[1..].iter().product();
    let mut out = x.data().to_vec();
    for c in 0..channels {
        let (m, s) = (mean.data()[c], std.data()[c]);
        for v in &mut out[c * inner..(c + 1) * inner] {
            *v = if shift { (*v - m) / s } else { *v / s };
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

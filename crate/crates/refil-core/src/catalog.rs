//! Reference split models and the compression/decompression optimization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{init_conv, init_conv_relu, init_dense, init_embedding, Layer};
use crate::model::SplitModel;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Channel-reducing map phi inserted at the end of the client, paired with
/// the expanding phi' at the head of the server. The compressed activation
/// becomes the new split layer, so the same leakage target needs less
/// noise relative to what crosses the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionSpec {
    pub c1: usize,
    pub c2: usize,
    pub kind: CompressionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompressionKind {
    /// 1x1 convolution over channels; spatial dims untouched.
    Conv1x1,
    FullyConnected,
}

/// Insert freshly initialized compression (client side) and decompression
/// (server side) layers around the split. The split activation must expose
/// `c1` channels (rank 3) or features (rank 1).
pub fn insert_compression(
    split: &SplitModel,
    spec: &CompressionSpec,
    rng: &mut SeededRng,
) -> Result<SplitModel> {
    if spec.c2 >= spec.c1 {
        return Err(Error::InvalidArgument(format!(
            "compression must reduce: c2 {} >= c1 {}",
            spec.c2, spec.c1
        )));
    }
    let client = split.client();
    let out_shape = client.output_shape();
    let (phi, phi_inv) = match spec.kind {
        CompressionKind::Conv1x1 => {
            if out_shape.len() != 3 || out_shape[0] != spec.c1 {
                return Err(Error::InvalidArgument(format!(
                    "conv compression expects a [{}, h, w] split activation, got {out_shape:?}",
                    spec.c1
                )));
            }
            (
                init_conv(spec.c2, spec.c1, 1, 1, 0, rng),
                init_conv(spec.c1, spec.c2, 1, 1, 0, rng),
            )
        }
        CompressionKind::FullyConnected => {
            if out_shape != [spec.c1] {
                return Err(Error::InvalidArgument(format!(
                    "fully-connected compression expects a [{}] split activation, got {out_shape:?}",
                    spec.c1
                )));
            }
            (
                init_dense(spec.c2, spec.c1, rng),
                init_dense(spec.c1, spec.c2, rng),
            )
        }
    };
    let idx = split.split_index();
    let mut layers = Vec::with_capacity(split.layers().len() + 2);
    layers.extend_from_slice(&split.layers()[..idx]);
    layers.push(phi);
    layers.push(phi_inv);
    layers.extend_from_slice(&split.layers()[idx..]);
    split.with_layers(layers, idx + 1)
}

/// Named split point of the reference CNN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CnnSplit {
    /// After the first convolution (depth 1/8): client = standardize + conv.
    Early,
    /// After block 4 of 8 (depth 1/2), pooling included.
    Middle,
    /// After block 6 of 8 (depth 3/4), pooling included.
    Late,
}

/// 28x28-input MLP split right after its first linear layer, so the split
/// activation has dimension `width`.
pub fn mnist_mlp(width: usize, rng: &mut SeededRng) -> SplitModel {
    let layers = vec![
        init_dense(width, 28 * 28, rng),
        Layer::Relu,
        init_dense(128, width, rng),
        Layer::Relu,
        init_dense(10, 128, rng),
    ];
    SplitModel::new(layers, vec![28 * 28], 1).expect("consistent by construction")
}

/// Desk-scale 8-block CNN for 3x32x32 images, 10 classes.
///
/// Blocks are conv+relu pairs with pooling after blocks 2, 4 and 6; the
/// named split points sit at depth fractions 1/8 (after the first conv,
/// before its relu), 1/2 (block 4) and 3/4 (block 6).
pub fn desk_cnn(split: CnnSplit, rng: &mut SeededRng) -> SplitModel {
    let layers = vec![
        Layer::standardize(
            Tensor::from_vec(vec![0.5, 0.5, 0.5]),
            Tensor::from_vec(vec![0.5, 0.5, 0.5]),
        )
        .expect("static shapes"),
        init_conv_relu(8, 3, 3, 1, 1, rng), // block 1
        Layer::Relu,
        init_conv_relu(8, 8, 3, 1, 1, rng), // block 2
        Layer::Relu,
        Layer::avg_pool(2).expect("window >= 1"),
        init_conv_relu(16, 8, 3, 1, 1, rng), // block 3
        Layer::Relu,
        init_conv_relu(16, 16, 3, 1, 1, rng), // block 4
        Layer::Relu,
        Layer::avg_pool(2).expect("window >= 1"),
        init_conv_relu(32, 16, 3, 1, 1, rng), // block 5
        Layer::Relu,
        init_conv_relu(32, 32, 3, 1, 1, rng), // block 6
        Layer::Relu,
        Layer::avg_pool(2).expect("window >= 1"),
        init_conv_relu(32, 32, 3, 1, 1, rng), // block 7
        Layer::Relu,
        init_conv_relu(32, 32, 3, 1, 1, rng), // block 8
        Layer::Relu,
        Layer::avg_pool(4).expect("window >= 1"),
        Layer::Flatten,
        init_dense(10, 32, rng),
    ];
    let split_index = match split {
        CnnSplit::Early => 2,
        CnnSplit::Middle => 11,
        CnnSplit::Late => 16,
    };
    SplitModel::new(layers, vec![3, 32, 32], split_index).expect("consistent by construction")
}

/// Two-tower recommender: user and item ids share one embedding table
/// (item rows offset by `n_users`), embeddings are concatenated and pushed
/// through dense layers of output sizes [64, 32, 16, 1]. Split sits after
/// the first linear layer.
pub fn ncf_mlp(n_users: usize, n_movies: usize, emb_dim: usize, rng: &mut SeededRng) -> SplitModel {
    let layers = vec![
        init_embedding(n_users + n_movies, emb_dim, rng),
        Layer::Concat { axis: 0 },
        init_dense(64, 2 * emb_dim, rng),
        Layer::Relu,
        init_dense(32, 64, rng),
        Layer::Relu,
        init_dense(16, 32, rng),
        Layer::Relu,
        init_dense(1, 16, rng),
    ];
    SplitModel::new(layers, vec![2], 3).expect("consistent by construction")
}

/// Index tensor for one (user, movie) interaction against the shared table.
pub fn ncf_input(uid: usize, mid: usize, n_users: usize) -> Tensor {
    Tensor::from_vec(vec![uid as f32, (n_users + mid) as f32])
}

/// Rewrite raw (uid, mid) interaction examples onto the shared-table index
/// space the recommender expects.
pub fn remap_interactions(
    examples: &[crate::train::Example],
    n_users: usize,
) -> crate::error::Result<Vec<crate::train::Example>> {
    examples
        .iter()
        .map(|ex| {
            if ex.input.len() != 2 {
                return Err(Error::InvalidArgument(format!(
                    "interaction example must be [uid, mid], got {:?}",
                    ex.input.shape()
                )));
            }
            let uid = ex.input.data()[0] as usize;
            let mid = ex.input.data()[1] as usize;
            Ok(crate::train::Example {
                input: ncf_input(uid, mid, n_users),
                label: ex.label.clone(),
            })
        })
        .collect()
}

/// Every reference model under its catalog name. Deterministic in the seed.
pub fn reference_models(seed: u64) -> Vec<(String, SplitModel)> {
    let root = SeededRng::new(seed);
    let make = |label: &str| root.derive(&[hash_label(label)]);
    vec![
        ("mlp-1000".into(), mnist_mlp(1000, &mut make("mlp-1000"))),
        ("mlp-10000".into(), mnist_mlp(10_000, &mut make("mlp-10000"))),
        (
            "cnn-early".into(),
            desk_cnn(CnnSplit::Early, &mut make("cnn")),
        ),
        (
            "cnn-middle".into(),
            desk_cnn(CnnSplit::Middle, &mut make("cnn")),
        ),
        ("cnn-late".into(), desk_cnn(CnnSplit::Late, &mut make("cnn"))),
        (
            "recommender".into(),
            ncf_mlp(1000, 1000, 32, &mut make("recommender")),
        ),
    ]
}

fn hash_label(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x1000_0000_01b3)
        })
}

//! Training-level behavior: the SNR regularizer actually reduces the
//! leakage/signal ratio, compression keeps models trainable, and the
//! recommender pipeline learns.

use refil_core::catalog::{insert_compression, ncf_mlp, remap_interactions, CompressionKind, CompressionSpec};
use refil_core::data::{load_dataset, DatasetSource, SyntheticKind};
use refil_core::layer::{init_dense, Layer};
use refil_core::model::SplitModel;
use refil_core::rng::SeededRng;
use refil_core::tensor::Tensor;
use refil_core::train::{snr_loss, train, Example, Label, OptimizerKind, TaskLoss, TrainConfig};

fn toy_classification(n: usize, dim: usize, seed: u64) -> Vec<Example> {
    let mut rng = SeededRng::new(seed);
    (0..n)
        .map(|i| {
            let cls = i % 2;
            let center = if cls == 0 { -0.8 } else { 0.8 };
            let input = Tensor::from_vec(
                (0..dim)
                    .map(|j| {
                        if j < 2 {
                            center + 0.4 * rng.normal_f32()
                        } else {
                            rng.normal_f32()
                        }
                    })
                    .collect(),
            );
            Example {
                input,
                label: Label::Class(cls),
            }
        })
        .collect()
}

fn mlp_split(dim: usize, seed: u64) -> SplitModel {
    let mut rng = SeededRng::new(seed);
    SplitModel::new(
        vec![
            init_dense(16, dim, &mut rng),
            Layer::Relu,
            init_dense(8, 16, &mut rng),
            Layer::Relu,
            init_dense(2, 8, &mut rng),
        ],
        vec![dim],
        2,
    )
    .unwrap()
}

/// Mean post-training snr value of the client over a probe set.
fn mean_client_snr(split: &SplitModel, data: &[Example]) -> f64 {
    let client = split.client();
    let mut rng = SeededRng::new(99);
    data.iter()
        .take(32)
        .map(|ex| snr_loss(&client, &ex.input, 8, &mut rng).unwrap())
        .sum::<f64>()
        / 32.0
}

#[test]
fn snr_regularizer_reduces_trace_over_signal() {
    let data = toy_classification(192, 12, 5);
    let base_cfg = TrainConfig {
        optimizer: OptimizerKind::Adam {
            lr: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        epochs: 10,
        batch_size: 16,
        task_loss: TaskLoss::CrossEntropy,
        snr_lambda: 0.0,
        snr_probe_count: 4,
        seed: 17,
    };

    let mut plain = mlp_split(12, 3);
    let log_plain = train(&mut plain, &data, &base_cfg).unwrap();

    let mut regularized = mlp_split(12, 3);
    let mut snr_cfg = base_cfg;
    snr_cfg.snr_lambda = 0.2;
    let log_snr = train(&mut regularized, &data, &snr_cfg).unwrap();

    let snr_plain = mean_client_snr(&plain, &data);
    let snr_reg = mean_client_snr(&regularized, &data);
    assert!(
        snr_reg < snr_plain,
        "regularized run must end with lower trace/signal: {snr_reg} vs {snr_plain}"
    );
    // and the task still trains
    assert!(
        log_snr.epochs.last().unwrap().task_metric > 0.8,
        "regularized accuracy {}",
        log_snr.epochs.last().unwrap().task_metric
    );
    assert!(log_plain.epochs.last().unwrap().task_metric > 0.9);
}

#[test]
fn compressed_split_models_train() {
    let data = toy_classification(128, 8, 7);
    let base = mlp_split(8, 11);
    let spec = CompressionSpec {
        c1: 16,
        c2: 3,
        kind: CompressionKind::FullyConnected,
    };
    let mut rng = SeededRng::new(2);
    let mut compressed = insert_compression(&base, &spec, &mut rng).unwrap();
    assert_eq!(compressed.client().output_shape(), &[3]);
    let cfg = TrainConfig {
        optimizer: OptimizerKind::Adam {
            lr: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        epochs: 12,
        batch_size: 16,
        task_loss: TaskLoss::CrossEntropy,
        snr_lambda: 0.0,
        snr_probe_count: 0,
        seed: 13,
    };
    let log = train(&mut compressed, &data, &cfg).unwrap();
    assert!(
        log.epochs.last().unwrap().task_metric > 0.9,
        "accuracy {}",
        log.epochs.last().unwrap().task_metric
    );
}

#[test]
fn recommender_trains_above_chance_auc() {
    let ds = load_dataset(&DatasetSource::Synthetic {
        kind: SyntheticKind::Interactions {
            users: 60,
            movies: 80,
        },
        size: 2000,
        seed: 21,
    })
    .unwrap();
    let (users, movies) = ds.info.users_movies.unwrap();
    let examples = remap_interactions(&ds.examples, users).unwrap();
    let mut split = ncf_mlp(users, movies, 32, &mut SeededRng::new(4));
    let cfg = TrainConfig {
        optimizer: OptimizerKind::Adam {
            lr: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        epochs: 6,
        batch_size: 64,
        task_loss: TaskLoss::BinaryCrossEntropy,
        snr_lambda: 0.0,
        snr_probe_count: 0,
        seed: 8,
    };
    let log = train(&mut split, &examples, &cfg).unwrap();
    let auc = log.epochs.last().unwrap().task_metric;
    assert!(auc > 0.62, "final training AUC {auc} should beat chance");
}

#[test]
fn snr_loss_is_scale_invariant_for_linear_clients() {
    // scaling the client's final linear layer by c scales trace and signal
    // by c^2 alike
    let mut rng = SeededRng::new(31);
    let client = refil_core::model::Model::new(vec![init_dense(6, 4, &mut rng)], vec![4]).unwrap();
    let mut scaled = client.clone();
    for p in scaled.layers_mut()[0].params_mut() {
        for v in p.data_mut() {
            *v *= 3.0;
        }
    }
    let x = Tensor::from_vec(vec![0.4, -0.2, 0.9, 0.1]);
    let a = snr_loss(&client, &x, 16, &mut SeededRng::new(5)).unwrap();
    let b = snr_loss(&scaled, &x, 16, &mut SeededRng::new(5)).unwrap();
    assert!(
        ((a - b) / a).abs() < 1e-2,
        "snr must be scale-invariant: {a} vs {b}"
    );
}

#[test]
fn snr_loss_invariant_under_output_rotation() {
    // append an orthogonal rotation: trace and ||z||^2 both unchanged
    let mut rng = SeededRng::new(41);
    let base = init_dense(4, 4, &mut rng);
    let client = refil_core::model::Model::new(vec![base.clone()], vec![4]).unwrap();

    // Gram-Schmidt on a random 4x4 to get an orthogonal matrix
    let mut q: Vec<Vec<f32>> = (0..4)
        .map(|_| (0..4).map(|_| rng.normal_f32()).collect())
        .collect();
    for i in 0..4 {
        for j in 0..i {
            let dot: f32 = (0..4).map(|k| q[i][k] * q[j][k]).sum();
            for k in 0..4 {
                q[i][k] -= dot * q[j][k];
            }
        }
        let norm: f32 = (0..4).map(|k| q[i][k] * q[i][k]).sum::<f32>().sqrt();
        for k in 0..4 {
            q[i][k] /= norm;
        }
    }
    let rot = Layer::dense(
        Tensor::new(vec![4, 4], q.concat()).unwrap(),
        Tensor::from_vec(vec![0.0; 4]),
    )
    .unwrap();
    let rotated = refil_core::model::Model::new(vec![base, rot], vec![4]).unwrap();

    let x = Tensor::from_vec(vec![0.3, 0.7, -0.5, 0.2]);
    let a = snr_loss(&client, &x, 32, &mut SeededRng::new(6)).unwrap();
    let b = snr_loss(&rotated, &x, 32, &mut SeededRng::new(6)).unwrap();
    assert!(
        ((a - b) / a).abs() < 1e-2,
        "orthogonal output rotation must not change snr: {a} vs {b}"
    );
}

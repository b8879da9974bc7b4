//! Experiment recipes: sweep a grid of leakage targets, run attacks or
//! utility evaluations, and emit CSV + SVG reports.
//!
//! Everything is a pure function of (spec, seed): per-trial noise, attack
//! initialization and probe streams are derived from (seed, grid index,
//! trial index), so grid points and trials can run in parallel without
//! changing a byte of output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{reconstruct, AttackConfig, AttackInit};
use crate::catalog::{
    desk_cnn, insert_compression, mnist_mlp, ncf_mlp, CnnSplit, CompressionSpec,
};
use crate::checkpoint::load_model;
use crate::data::{load_dataset, Dataset, DatasetSource};
use crate::error::{Error, Result};
use crate::layer::{init_dense, Layer};
use crate::metrics;
use crate::model::{Model, SplitModel};
use crate::privacy::{refil_forward, Estimator, RefilConfig};
use crate::rng::{derive_seed, SeededRng};
use crate::tensor::Tensor;
use crate::train::{classify_hit, train, Example, TaskLoss, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelRecipe {
    /// Reference MLP; the client (first linear layer) is the attack target.
    MnistMlp { width: usize },
    /// Reference CNN at a named split.
    DeskCnn { split: CnnSplit },
    /// Recommender over synthetic interactions.
    Recommender {
        users: usize,
        movies: usize,
        emb_dim: usize,
    },
    /// A synthetic embedding table of `rows` x `emb_dim` (entries scaled by
    /// `scale`) behind a dense client layer; identification target.
    EmbeddingTable {
        rows: usize,
        emb_dim: usize,
        out_dim: usize,
        scale: f32,
    },
    /// Attack an arbitrary saved client model.
    Checkpoint { client: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExperimentKind {
    /// Reconstruct inputs, score MSE (and SSIM for images).
    Reconstruction,
    /// Reconstruct embeddings, identify rows, score top-1/top-5.
    Identification,
    /// Train no-opt / compression / compression+SNR variants and measure
    /// accuracy under the noised split at each grid point.
    Utility {
        compression: CompressionSpec,
        snr_lambda: f64,
        train: TrainConfig,
        eval_size: usize,
        eval_estimator: Estimator,
        /// 0: the SNR term is active for all epochs (joint training).
        /// n > 0: the SNR variant first trains task-only like the others,
        /// then fine-tunes for n extra epochs with the SNR term. Joint
        /// from-scratch training can fall into the regularizer's degenerate
        /// minimum (a constant client: zero trace, zero task signal), which
        /// the fine-tuning schedule avoids.
        #[serde(default)]
        snr_epochs: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub kind: ExperimentKind,
    pub model: ModelRecipe,
    pub dataset: DatasetSource,
    pub subsample: Option<usize>,
    /// Grid of 1/dFIL values (per-dimension MSE floors).
    pub dfil_grid: Vec<f64>,
    pub attack: AttackConfig,
    pub trials: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Trace estimator used for calibration during the experiment.
    pub estimator: Estimator,
    /// Write sample reconstructions as PGM/PPM where image-shaped.
    #[serde(default)]
    pub dump_images: bool,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<ExperimentSpec> {
        let spec: ExperimentSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dfil_grid.is_empty() || self.dfil_grid.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Experiment(
                "dfil_grid must be non-empty with positive 1/dFIL values".into(),
            ));
        }
        if self.trials == 0 {
            return Err(Error::Experiment("trials must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean, standard error and count for one aggregated cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len();
    if n == 0 {
        return Aggregate {
            mean: f64::NAN,
            stderr: f64::NAN,
            count: 0,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)
    } else {
        0.0
    };
    Aggregate {
        mean,
        stderr: (var / n as f64).sqrt(),
        count: n,
    }
}

#[derive(Debug, Clone)]
pub struct PointSummary {
    pub one_over_dfil: f64,
    pub mse: Aggregate,
    pub ssim: Aggregate,
    pub top1: Aggregate,
    pub top5: Aggregate,
}

#[derive(Debug, Clone)]
pub struct UtilityRow {
    pub one_over_dfil: f64,
    pub no_opt: f64,
    pub comp: f64,
    pub comp_snr: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub results_csv: PathBuf,
    pub points: Vec<PointSummary>,
    pub utility: Vec<UtilityRow>,
}

struct BuiltTarget {
    client: Model,
    table: Option<Tensor>,
    split: Option<SplitModel>,
}

fn build_target(spec: &ExperimentSpec) -> Result<BuiltTarget> {
    let mut rng = SeededRng::new(derive_seed(spec.seed, &[0x6d6f64656c]));
    match &spec.model {
        ModelRecipe::MnistMlp { width } => {
            let split = mnist_mlp(*width, &mut rng);
            Ok(BuiltTarget {
                client: split.client(),
                table: None,
                split: Some(split),
            })
        }
        ModelRecipe::DeskCnn { split } => {
            let split = desk_cnn(*split, &mut rng);
            Ok(BuiltTarget {
                client: split.client(),
                table: None,
                split: Some(split),
            })
        }
        ModelRecipe::Recommender {
            users,
            movies,
            emb_dim,
        } => {
            let split = ncf_mlp(*users, *movies, *emb_dim, &mut rng);
            let client = split.client();
            let table = match client.layers().first() {
                Some(Layer::EmbeddingLookup { table }) => table.clone(),
                _ => unreachable!("recommender starts with an embedding"),
            };
            let (_, diff) = client.split_embedding_prefix()?;
            Ok(BuiltTarget {
                client: diff,
                table: Some(table),
                split: Some(split),
            })
        }
        ModelRecipe::EmbeddingTable {
            rows,
            emb_dim,
            out_dim,
            scale,
        } => {
            let table = Tensor::new(
                vec![*rows, *emb_dim],
                (0..rows * emb_dim)
                    .map(|_| scale * rng.normal_f32())
                    .collect(),
            )?;
            let client = Model::new(vec![init_dense(*out_dim, *emb_dim, &mut rng)], vec![*emb_dim])?;
            Ok(BuiltTarget {
                client,
                table: Some(table),
                split: None,
            })
        }
        ModelRecipe::Checkpoint { client } => Ok(BuiltTarget {
            client: load_model(client)?,
            table: None,
            split: None,
        }),
    }
}

/// One per-trial record of an attack experiment.
#[derive(Debug, Clone)]
struct TrialRow {
    one_over_dfil: f64,
    trial: usize,
    mse: f64,
    ssim: Option<f64>,
    top1: Option<bool>,
    top5: Option<bool>,
    x_hat: Option<Tensor>,
    truth: Option<Tensor>,
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    std::fs::create_dir_all(&spec.output_dir)?;
    match &spec.kind {
        ExperimentKind::Reconstruction | ExperimentKind::Identification => run_attack_grid(spec),
        ExperimentKind::Utility {
            compression,
            snr_lambda,
            train: train_cfg,
            eval_size,
            eval_estimator,
            snr_epochs,
        } => run_utility(
            spec,
            compression,
            *snr_lambda,
            train_cfg,
            *eval_size,
            *eval_estimator,
            *snr_epochs,
        ),
    }
}

fn run_attack_grid(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let target = build_target(spec)?;
    let identification = matches!(spec.kind, ExperimentKind::Identification);
    if identification && target.table.is_none() {
        return Err(Error::Experiment(
            "identification experiments need a model recipe with an embedding table".into(),
        ));
    }
    let dataset = if identification {
        None
    } else {
        Some(load_dataset(&spec.dataset)?)
    };

    let jobs: Vec<(usize, usize)> = (0..spec.dfil_grid.len())
        .flat_map(|g| (0..spec.trials).map(move |t| (g, t)))
        .collect();

    let rows: Vec<Result<TrialRow>> = jobs
        .par_iter()
        .map(|&(g, t)| run_attack_trial(spec, &target, dataset.as_ref(), g, t))
        .collect();
    let mut trial_rows = Vec::with_capacity(rows.len());
    for r in rows {
        trial_rows.push(r?);
    }

    // canonical CSV artifact
    let mut csv = String::from("one_over_dfil,trial,mse,ssim,top1,top5\n");
    for row in &trial_rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            row.one_over_dfil,
            row.trial,
            row.mse,
            row.ssim.map(|v| v.to_string()).unwrap_or_default(),
            row.top1.map(|v| (v as u8).to_string()).unwrap_or_default(),
            row.top5.map(|v| (v as u8).to_string()).unwrap_or_default(),
        );
    }
    let results_csv = spec.output_dir.join("results.csv");
    std::fs::write(&results_csv, csv)?;

    if spec.dump_images {
        for row in trial_rows.iter().filter(|r| r.trial == 0) {
            if let (Some(x_hat), Some(truth)) = (&row.x_hat, &row.truth) {
                if x_hat.rank() >= 2 {
                    let tag = format!("{}", row.one_over_dfil).replace('.', "_");
                    let _ = crate::pnm::write_image(
                        &spec.output_dir.join(format!("recon_{tag}.ppm")),
                        x_hat,
                    );
                    let _ = crate::pnm::write_image(&spec.output_dir.join("truth.ppm"), truth);
                }
            }
        }
    }

    let points = summarize_points(&spec.dfil_grid, &trial_rows);
    write_attack_plot(spec, &points)?;
    Ok(ExperimentReport {
        results_csv,
        points,
        utility: Vec::new(),
    })
}

fn run_attack_trial(
    spec: &ExperimentSpec,
    target: &BuiltTarget,
    dataset: Option<&Dataset>,
    g: usize,
    t: usize,
) -> Result<TrialRow> {
    let one_over = spec.dfil_grid[g];
    let target_dfil = 1.0 / one_over;
    let mut noise_rng = SeededRng::new(derive_seed(spec.seed, &[g as u64, t as u64, 1]));

    // Pick the true input.
    let x = match (&spec.kind, dataset, &target.table) {
        (ExperimentKind::Identification, _, Some(table)) => {
            let mut pick = SeededRng::new(derive_seed(spec.seed, &[g as u64, t as u64, 2]));
            let row = pick.below(table.shape()[0]);
            let emb = table.shape()[1];
            Tensor::new(
                vec![emb],
                table.data()[row * emb..(row + 1) * emb].to_vec(),
            )?
            // row index rides along via the closure below
        }
        (_, Some(ds), _) => {
            let ex = &ds.examples[t % ds.examples.len()];
            reshape_for(&target.client, &ex.input)?
        }
        _ => unreachable!("validated above"),
    };
    // For identification we need the row index again (same derivation).
    let true_row = if matches!(spec.kind, ExperimentKind::Identification) {
        let table = target.table.as_ref().expect("checked");
        let mut pick = SeededRng::new(derive_seed(spec.seed, &[g as u64, t as u64, 2]));
        Some(pick.below(table.shape()[0]))
    } else {
        None
    };

    let cfg = RefilConfig::new(target_dfil, spec.estimator, spec.seed);
    let noised = refil_forward(&target.client, &x, &cfg, &mut noise_rng)?;

    let mut attack_cfg = spec.attack;
    if let AttackInit::GaussianRandom { sigma, .. } = attack_cfg.init {
        attack_cfg.init = AttackInit::GaussianRandom {
            seed: derive_seed(spec.seed, &[g as u64, t as u64, 3]),
            sigma,
        };
    }
    let result = reconstruct(&noised.z_noised, &target.client, &attack_cfg, Some(&x))?;

    let (top1, top5) = match (&target.table, true_row) {
        (Some(table), Some(row)) => {
            let ranked = crate::attack::embedding_id_ranking(&result.x_hat, table, 5)?;
            (
                Some(metrics::topk_success(&ranked, row, 1)?),
                Some(metrics::topk_success(&ranked, row, 5)?),
            )
        }
        _ => (None, None),
    };

    Ok(TrialRow {
        one_over_dfil: one_over,
        trial: t,
        mse: result.mse.expect("truth supplied"),
        ssim: result.ssim,
        top1,
        top5,
        x_hat: Some(result.x_hat),
        truth: Some(x),
    })
}

fn reshape_for(client: &Model, input: &Tensor) -> Result<Tensor> {
    if input.shape() == client.input_shape() {
        Ok(input.clone())
    } else if input.len() == client.input_dim() {
        input.reshape(client.input_shape())
    } else {
        Err(Error::ShapeMismatch {
            context: "dataset example vs client input".into(),
            expected: client.input_shape().to_vec(),
            actual: input.shape().to_vec(),
        })
    }
}

fn summarize_points(grid: &[f64], rows: &[TrialRow]) -> Vec<PointSummary> {
    grid.iter()
        .map(|&one_over| {
            let at: Vec<&TrialRow> = rows
                .iter()
                .filter(|r| r.one_over_dfil == one_over)
                .collect();
            let collect = |f: &dyn Fn(&TrialRow) -> Option<f64>| -> Vec<f64> {
                at.iter().filter_map(|r| f(r)).collect()
            };
            PointSummary {
                one_over_dfil: one_over,
                mse: aggregate(&collect(&|r| Some(r.mse))),
                ssim: aggregate(&collect(&|r| r.ssim)),
                top1: aggregate(&collect(&|r| r.top1.map(|b| b as u8 as f64))),
                top5: aggregate(&collect(&|r| r.top5.map(|b| b as u8 as f64))),
            }
        })
        .collect()
}

fn write_attack_plot(spec: &ExperimentSpec, points: &[PointSummary]) -> Result<()> {
    let mut series = Vec::new();
    let take = |f: &dyn Fn(&PointSummary) -> Aggregate, name: &str| -> Option<crate::plot::Series> {
        let pts: Vec<(f64, f64, f64)> = points
            .iter()
            .filter(|p| f(p).count > 0)
            .map(|p| (p.one_over_dfil, f(p).mean, f(p).stderr))
            .collect();
        (!pts.is_empty()).then(|| crate::plot::Series {
            name: name.into(),
            points: pts,
        })
    };
    if let Some(s) = take(&|p| p.mse, "mse") {
        series.push(s);
    }
    if let Some(s) = take(&|p| p.ssim, "ssim") {
        series.push(s);
    }
    if let Some(s) = take(&|p| p.top1, "top-1 rate") {
        series.push(s);
    }
    if let Some(s) = take(&|p| p.top5, "top-5 rate") {
        series.push(s);
    }
    crate::plot::write_svg(
        &spec.output_dir.join("plot.svg"),
        &crate::plot::PlotSpec {
            title: spec.name.clone(),
            x_label: "1/dFIL".into(),
            y_label: "metric".into(),
            log_x: true,
        },
        &series,
    )
}

// ---- Utility experiments ---------------------------------------------------

fn run_utility(
    spec: &ExperimentSpec,
    compression: &CompressionSpec,
    snr_lambda: f64,
    train_cfg: &TrainConfig,
    eval_size: usize,
    eval_estimator: Estimator,
    snr_epochs: usize,
) -> Result<ExperimentReport> {
    let base = build_target(spec)?
        .split
        .ok_or_else(|| Error::Experiment("utility experiments need a split-model recipe".into()))?;
    let dataset = load_dataset(&spec.dataset)?;
    let mut examples = dataset.examples;
    SeededRng::new(derive_seed(spec.seed, &[0x5d])).shuffle(&mut examples);
    if let Some(n) = spec.subsample {
        examples.truncate(n);
    }
    if examples.len() <= eval_size {
        return Err(Error::Experiment(format!(
            "need more than eval_size={eval_size} examples, have {}",
            examples.len()
        )));
    }
    let (train_set, eval_set) = examples.split_at(examples.len() - eval_size);

    let mut comp_rng = SeededRng::new(derive_seed(spec.seed, &[0xc0]));

    // no-opt variant
    let mut no_opt = base.clone();
    let mut cfg_plain = *train_cfg;
    cfg_plain.snr_lambda = 0.0;
    let log_no_opt = train(&mut no_opt, train_set, &cfg_plain)?;

    // compression variant
    let mut comp = insert_compression(&base, compression, &mut comp_rng)?;
    let log_comp = train(&mut comp, train_set, &cfg_plain)?;

    // compression + SNR variant (same initialization as `comp`)
    let mut comp_snr = insert_compression(&base, compression, &mut SeededRng::new(derive_seed(spec.seed, &[0xc0])))?;
    let log_comp_snr = if snr_epochs == 0 {
        let mut cfg_snr = *train_cfg;
        cfg_snr.snr_lambda = snr_lambda;
        train(&mut comp_snr, train_set, &cfg_snr)?
    } else {
        // task-only phase identical to `comp`, then an SNR fine-tune phase
        let mut log = train(&mut comp_snr, train_set, &cfg_plain)?;
        let mut cfg_snr = *train_cfg;
        cfg_snr.snr_lambda = snr_lambda;
        cfg_snr.epochs = snr_epochs;
        cfg_snr.seed = derive_seed(train_cfg.seed, &[0xf1]);
        let tune = train(&mut comp_snr, train_set, &cfg_snr)?;
        log.epochs.extend(tune.epochs);
        log.snr_clamp_warnings += tune.snr_clamp_warnings;
        log
    };

    for (name, log) in [
        ("train_no_opt.csv", &log_no_opt),
        ("train_comp.csv", &log_comp),
        ("train_comp_snr.csv", &log_comp_snr),
    ] {
        std::fs::write(spec.output_dir.join(name), log.to_csv())?;
    }

    let variants: [(&str, &SplitModel); 3] = [
        ("no_opt", &no_opt),
        ("comp", &comp),
        ("comp_snr", &comp_snr),
    ];

    let mut utility = Vec::new();
    let mut csv = String::from("one_over_dfil,variant,accuracy\n");
    for (g, &one_over) in spec.dfil_grid.iter().enumerate() {
        let mut row = UtilityRow {
            one_over_dfil: one_over,
            no_opt: 0.0,
            comp: 0.0,
            comp_snr: 0.0,
        };
        for (vi, (name, model)) in variants.iter().enumerate() {
            let acc = evaluate_noisy_accuracy(
                model,
                train_cfg.task_loss,
                eval_set,
                1.0 / one_over,
                eval_estimator,
                derive_seed(spec.seed, &[g as u64, vi as u64, 0xe]),
            )?;
            let _ = writeln!(csv, "{one_over},{name},{acc}");
            match vi {
                0 => row.no_opt = acc,
                1 => row.comp = acc,
                _ => row.comp_snr = acc,
            }
        }
        utility.push(row);
    }
    let results_csv = spec.output_dir.join("results.csv");
    std::fs::write(&results_csv, &csv)?;

    // Table 1-shaped wide table
    let mut table = String::from("one_over_dfil,no_opt,comp,comp_snr\n");
    for r in &utility {
        let _ = writeln!(
            table,
            "{},{},{},{}",
            r.one_over_dfil, r.no_opt, r.comp, r.comp_snr
        );
    }
    std::fs::write(spec.output_dir.join("accuracy_table.csv"), table)?;

    let picks: [(&str, fn(&UtilityRow) -> f64); 3] = [
        ("no_opt", |r| r.no_opt),
        ("comp", |r| r.comp),
        ("comp_snr", |r| r.comp_snr),
    ];
    let series: Vec<crate::plot::Series> = picks
        .iter()
        .map(|(name, f)| crate::plot::Series {
            name: (*name).into(),
            points: utility.iter().map(|r| (r.one_over_dfil, f(r), 0.0)).collect(),
        })
        .collect();
    crate::plot::write_svg(
        &spec.output_dir.join("plot.svg"),
        &crate::plot::PlotSpec {
            title: spec.name.clone(),
            x_label: "1/dFIL".into(),
            y_label: "accuracy".into(),
            log_x: true,
        },
        &series,
    )?;

    Ok(ExperimentReport {
        results_csv,
        points: Vec::new(),
        utility,
    })
}

/// Accuracy of a split model under the noised split-layer forward pass.
/// Each example gets its own derived noise stream; reduction order is fixed.
pub fn evaluate_noisy_accuracy(
    split: &SplitModel,
    loss: TaskLoss,
    data: &[Example],
    target_dfil: f64,
    estimator: Estimator,
    seed: u64,
) -> Result<f64> {
    let client = split.client();
    let server = split.server();
    let (prefix, diff) = client.split_embedding_prefix()?;
    let cfg = RefilConfig::new(target_dfil, estimator, seed);
    let hits: Vec<Result<f64>> = data
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let x_diff = match &prefix {
                Some(p) => p.forward(&ex.input)?,
                None => ex.input.clone(),
            };
            let mut rng = SeededRng::new(derive_seed(seed, &[i as u64]));
            let noised = refil_forward(&diff, &x_diff, &cfg, &mut rng)?;
            let out = server.forward(&noised.z_noised)?;
            classify_hit(loss, &out, &ex.label)
        })
        .collect();
    let mut total = 0.0;
    for h in hits {
        total += h?;
    }
    Ok(total / data.len() as f64)
}

// ---- Report ----------------------------------------------------------------

/// Aggregate a results directory: print a table, re-render the plot.
/// Returns the rendered table text.
pub fn report(results_dir: &Path) -> Result<String> {
    let csv_path = results_dir.join("results.csv");
    let text = std::fs::read_to_string(&csv_path)
        .map_err(|e| Error::Data(format!("{}: {e}", csv_path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let body: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();

    let mut out = String::new();
    if body.is_empty() {
        let _ = writeln!(out, "warning: no result rows in {}", csv_path.display());
        return Ok(out);
    }

    if header.starts_with("one_over_dfil,trial") {
        // per-trial attack rows
        let mut grid: Vec<f64> = Vec::new();
        let mut rows: Vec<TrialRow> = Vec::new();
        for (ln, line) in body.iter().enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::Data(format!(
                    "results.csv line {}: expected 6 fields",
                    ln + 2
                )));
            }
            let parse =
                |s: &str| -> Result<f64> {
                    s.parse().map_err(|_| {
                        Error::Data(format!("results.csv line {}: bad number {s:?}", ln + 2))
                    })
                };
            let one_over = parse(fields[0])?;
            if !grid.contains(&one_over) {
                grid.push(one_over);
            }
            rows.push(TrialRow {
                one_over_dfil: one_over,
                trial: parse(fields[1])? as usize,
                mse: parse(fields[2])?,
                ssim: (!fields[3].is_empty()).then(|| parse(fields[3])).transpose()?,
                top1: (!fields[4].is_empty())
                    .then(|| parse(fields[4]).map(|v| v != 0.0))
                    .transpose()?,
                top5: (!fields[5].is_empty())
                    .then(|| parse(fields[5]).map(|v| v != 0.0))
                    .transpose()?,
                x_hat: None,
                truth: None,
            });
        }
        let points = summarize_points(&grid, &rows);
        let _ = writeln!(
            out,
            "{:>12} {:>6} {:>14} {:>14} {:>8} {:>8}",
            "1/dFIL", "n", "mse", "ssim", "top1", "top5"
        );
        for p in &points {
            let _ = writeln!(
                out,
                "{:>12} {:>6} {:>14} {:>14} {:>8} {:>8}",
                p.one_over_dfil,
                p.mse.count,
                format_agg(p.mse),
                format_agg(p.ssim),
                format_agg(p.top1),
                format_agg(p.top5),
            );
        }
        let spec = ExperimentSpec {
            name: format!("report: {}", results_dir.display()),
            kind: ExperimentKind::Reconstruction,
            model: ModelRecipe::MnistMlp { width: 1 },
            dataset: DatasetSource::Synthetic {
                kind: crate::data::SyntheticKind::UniformVectors { dim: 1 },
                size: 1,
                seed: 0,
            },
            subsample: None,
            dfil_grid: grid,
            attack: AttackConfig::default(),
            trials: 1,
            seed: 0,
            output_dir: results_dir.to_path_buf(),
            estimator: Estimator::Exact,
            dump_images: false,
        };
        write_attack_plot(&spec, &points)?;
    } else if header.starts_with("one_over_dfil,variant") {
        let _ = writeln!(out, "{:>12} {:>12} {:>12}", "1/dFIL", "variant", "accuracy");
        for line in &body {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() == 3 {
                let _ = writeln!(out, "{:>12} {:>12} {:>12}", fields[0], fields[1], fields[2]);
            }
        }
    } else {
        return Err(Error::Data(format!(
            "unrecognized results.csv header: {header:?}"
        )));
    }
    Ok(out)
}

fn format_agg(a: Aggregate) -> String {
    if a.count == 0 {
        "-".into()
    } else {
        format!("{:.4}±{:.4}", a.mean, a.stderr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_recon_spec(dir: &Path) -> ExperimentSpec {
        ExperimentSpec {
            name: "tiny".into(),
            kind: ExperimentKind::Reconstruction,
            model: ModelRecipe::EmbeddingTable {
                rows: 20,
                emb_dim: 6,
                out_dim: 8,
                scale: 1.0,
            },
            dataset: DatasetSource::Synthetic {
                kind: crate::data::SyntheticKind::UniformVectors { dim: 6 },
                size: 4,
                seed: 0,
            },
            subsample: None,
            dfil_grid: vec![0.1, 1.0],
            attack: AttackConfig {
                iterations: 60,
                restarts: 1,
                ..AttackConfig::default()
            },
            trials: 3,
            seed: 9,
            output_dir: dir.to_path_buf(),
            estimator: Estimator::Exact,
            dump_images: false,
        }
    }

    #[test]
    fn experiment_runs_and_reruns_byte_identically() {
        let tmp = tempfile::tempdir().unwrap();
        let dir_a = tmp.path().join("a");
        let dir_b = tmp.path().join("b");
        let mut spec = tiny_recon_spec(&dir_a);
        let report_a = run_experiment(&spec).unwrap();
        spec.output_dir = dir_b;
        let report_b = run_experiment(&spec).unwrap();
        let a = std::fs::read(report_a.results_csv).unwrap();
        let b = std::fs::read(report_b.results_csv).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn report_prints_aggregates() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = tiny_recon_spec(tmp.path());
        run_experiment(&spec).unwrap();
        let table = report(tmp.path()).unwrap();
        assert!(table.contains("1/dFIL"), "got: {table}");
        assert!(table.contains("0.1"));
    }

    #[test]
    fn report_on_empty_results_warns() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(
            tmp.path().join("results.csv"),
            "one_over_dfil,trial,mse,ssim,top1,top5\n",
        )
        .unwrap();
        let out = report(tmp.path()).unwrap();
        assert!(out.contains("warning"));
    }

    #[test]
    fn spec_json_roundtrip() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = tiny_recon_spec(tmp.path());
        let json = serde_json::to_string_pretty(&spec).unwrap();
        let back = ExperimentSpec::from_json(&json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn bad_grid_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let mut spec = tiny_recon_spec(tmp.path());
        spec.dfil_grid = vec![0.0];
        assert!(spec.validate().is_err());
        spec.dfil_grid = vec![];
        assert!(spec.validate().is_err());
    }
}

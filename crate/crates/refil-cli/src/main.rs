//! `refil` — measure and control how much a split-layer activation leaks
//! about the client's input, then check the result with real attacks.

mod dataspec;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use refil_core::attack::{reconstruct, AttackConfig, AttackInit, AttackMethod};
use refil_core::catalog::{
    desk_cnn, insert_compression, mnist_mlp, ncf_mlp, remap_interactions, CnnSplit,
    CompressionKind, CompressionSpec,
};
use refil_core::checkpoint::{load_model, save_model};
use refil_core::data::load_dataset;
use refil_core::error::{Error, Result};
use refil_core::experiment::{report as report_dir, run_experiment, ExperimentSpec};
use refil_core::model::SplitModel;
use refil_core::privacy::{calibrate_sigma, compute_dfil, refil_forward, Estimator, RefilConfig};
use refil_core::rng::{derive_seed, SeededRng};
use refil_core::service::{client_infer, read_activation_log, serve, LogMode, ServerCatalog};
use refil_core::tensor::Tensor;
use refil_core::train::{train, Example, OptimizerKind, TaskLoss, TrainConfig};

#[derive(Parser)]
#[command(
    name = "refil",
    about = "Split-inference privacy: leakage measurement, noise calibration, attacks, and a client/server split service",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a reference split model (optionally with compression and SNR loss)
    Train(TrainArgs),
    /// Calibrate the noise scale for a leakage target on one input
    Calibrate(CalibrateArgs),
    /// Run a reconstruction attack against noised activations
    Attack(AttackArgs),
    /// Serve server-side model halves over TCP
    Serve(ServeArgs),
    /// Run one noised split inference against a server
    Infer(InferArgs),
    /// Run an experiment spec (JSON) and write CSV/SVG reports
    Experiment(ExperimentArgs),
    /// Aggregate and print a results directory
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// mlp-1000 | mlp-10000 | cnn-early | cnn-middle | cnn-late | recommender
    #[arg(long)]
    recipe: String,
    /// Dataset spec (see long help of this flag)
    #[arg(long, long_help = dataspec::GRAMMAR_HELP)]
    data: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// sgd:lr=0.1,momentum=0.9 or adam:lr=0.001
    #[arg(long, default_value = "sgd:lr=0.1,momentum=0.9")]
    optimizer: String,
    #[arg(long, default_value_t = 0.0)]
    snr_lambda: f64,
    #[arg(long, default_value_t = 4)]
    snr_probes: usize,
    /// Insert a compression layer down to this channel/feature count
    #[arg(long)]
    compress_c2: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use only this many examples
    #[arg(long)]
    subsample: Option<usize>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Client-side model checkpoint (.rflm)
    #[arg(long)]
    client: PathBuf,
    /// Leakage target dFIL (reciprocal of the MSE floor)
    #[arg(long)]
    target_dfil: f64,
    /// Input source; defaults to a seeded uniform input of the right shape
    #[arg(long)]
    data: Option<String>,
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// exact | hutch:K
    #[arg(long, default_value = "exact")]
    estimator: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    client: PathBuf,
    /// Attack activations simulated locally from this dataset
    #[arg(long)]
    data: Option<String>,
    /// 1/dFIL to enforce when simulating
    #[arg(long)]
    one_over_dfil: Option<f64>,
    /// Replay an honest-but-curious activation log instead of simulating
    #[arg(long)]
    log: Option<PathBuf>,
    /// unbiased | tv:LAMBDA
    #[arg(long, default_value = "unbiased")]
    method: String,
    #[arg(long, default_value_t = 5000)]
    iterations: usize,
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "exact")]
    estimator: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7171")]
    bind: String,
    /// Directory of server-side .rflm checkpoints; file stem = model id
    #[arg(long)]
    models: PathBuf,
    /// Honest-but-curious mode: append received activations here
    #[arg(long)]
    log_activations: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    server: String,
    #[arg(long)]
    client: PathBuf,
    #[arg(long)]
    model_id: String,
    #[arg(long)]
    target_dfil: f64,
    #[arg(long)]
    data: Option<String>,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value = "exact")]
    estimator: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment spec JSON file
    #[arg(long)]
    spec: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory containing results.csv
    #[arg(long)]
    dir: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        3
    } else if matches!(e, Error::InvalidArgument(_)) {
        1
    } else {
        2
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Serve(args) => cmd_serve(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Experiment(args) => {
            let text = std::fs::read_to_string(&args.spec)?;
            let spec = ExperimentSpec::from_json(&text)?;
            let report = run_experiment(&spec)?;
            println!("wrote {}", report.results_csv.display());
            let table = report_dir(&spec.output_dir)?;
            print!("{table}");
            Ok(())
        }
        Command::Report(args) => {
            let table = report_dir(&args.dir)?;
            print!("{table}");
            Ok(())
        }
    }
}

fn parse_estimator(s: &str) -> Result<Estimator> {
    if s == "exact" {
        return Ok(Estimator::Exact);
    }
    if let Some(k) = s.strip_prefix("hutch:") {
        let probes = k
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad probe count {k:?}")))?;
        return Ok(Estimator::Hutchinson { probes });
    }
    Err(Error::InvalidArgument(format!(
        "estimator must be `exact` or `hutch:K`, got {s:?}"
    )))
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind> {
    let (kind, body) = s.split_once(':').unwrap_or((s, ""));
    let mut lr = None;
    let mut momentum = 0.9f64;
    for part in body.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("bad optimizer field {part:?}")))?;
        let val: f64 = v
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad optimizer value {v:?}")))?;
        match k {
            "lr" => lr = Some(val),
            "momentum" => momentum = val,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown optimizer field {other:?}"
                )))
            }
        }
    }
    match kind {
        "sgd" => Ok(OptimizerKind::Sgd {
            lr: lr.unwrap_or(0.1),
            momentum,
        }),
        "adam" => Ok(OptimizerKind::Adam {
            lr: lr.unwrap_or(1e-3),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }),
        other => Err(Error::InvalidArgument(format!(
            "optimizer must be sgd or adam, got {other:?}"
        ))),
    }
}

fn parse_method(s: &str) -> Result<AttackMethod> {
    if s == "unbiased" {
        return Ok(AttackMethod::Unbiased);
    }
    if let Some(l) = s.strip_prefix("tv:") {
        let lambda = l
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad tv lambda {l:?}")))?;
        return Ok(AttackMethod::TvPrior { lambda });
    }
    Err(Error::InvalidArgument(format!(
        "method must be `unbiased` or `tv:LAMBDA`, got {s:?}"
    )))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let source = dataspec::parse(&args.data)?;
    let dataset = load_dataset(&source)?;
    let mut rng = SeededRng::new(args.seed);

    let (mut split, task_loss) = match args.recipe.as_str() {
        "mlp-1000" => (mnist_mlp(1000, &mut rng), TaskLoss::CrossEntropy),
        "mlp-10000" => (mnist_mlp(10_000, &mut rng), TaskLoss::CrossEntropy),
        "cnn-early" => (desk_cnn(CnnSplit::Early, &mut rng), TaskLoss::CrossEntropy),
        "cnn-middle" => (desk_cnn(CnnSplit::Middle, &mut rng), TaskLoss::CrossEntropy),
        "cnn-late" => (desk_cnn(CnnSplit::Late, &mut rng), TaskLoss::CrossEntropy),
        "recommender" => {
            let (users, movies) = dataset.info.users_movies.ok_or_else(|| {
                Error::InvalidArgument("recommender needs an interaction dataset".into())
            })?;
            (ncf_mlp(users, movies, 32, &mut rng), TaskLoss::BinaryCrossEntropy)
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown recipe {other:?}"
            )))
        }
    };

    if let Some(c2) = args.compress_c2 {
        let out_shape = split.client().output_shape().to_vec();
        let spec = match out_shape.as_slice() {
            [c, _, _] => CompressionSpec {
                c1: *c,
                c2,
                kind: CompressionKind::Conv1x1,
            },
            [c] => CompressionSpec {
                c1: *c,
                c2,
                kind: CompressionKind::FullyConnected,
            },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "cannot compress split activation of shape {other:?}"
                )))
            }
        };
        split = insert_compression(&split, &spec, &mut rng)?;
    }

    let mut examples = dataset.examples;
    if args.recipe == "recommender" {
        let (users, _) = dataset.info.users_movies.expect("checked above");
        examples = remap_interactions(&examples, users)?;
    } else {
        examples = conform_inputs(&split, examples)?;
    }
    if let Some(n) = args.subsample {
        SeededRng::new(derive_seed(args.seed, &[0x5d])).shuffle(&mut examples);
        examples.truncate(n);
    }

    let cfg = TrainConfig {
        optimizer: parse_optimizer(&args.optimizer)?,
        epochs: args.epochs,
        batch_size: args.batch_size,
        task_loss,
        snr_lambda: args.snr_lambda,
        snr_probe_count: args.snr_probes,
        seed: args.seed,
    };
    let log = train(&mut split, &examples, &cfg)?;

    std::fs::create_dir_all(&args.out)?;
    save_model(&split.client(), &args.out.join("client.rflm"))?;
    save_model(&split.server(), &args.out.join("server.rflm"))?;
    save_model(&split.full(), &args.out.join("full.rflm"))?;
    std::fs::write(args.out.join("train_log.csv"), log.to_csv())?;
    if let Some(last) = log.epochs.last() {
        println!(
            "epoch {}: task_loss {:.4}, metric {:.4}, mean_snr {:.4}",
            last.epoch, last.task_loss, last.task_metric, last.mean_snr_loss
        );
    }
    println!("saved client/server/full checkpoints to {}", args.out.display());
    Ok(())
}

/// Reshape dataset examples onto the model input shape when the element
/// counts match (e.g. 28x28 images onto a 784-input MLP).
fn conform_inputs(split: &SplitModel, examples: Vec<Example>) -> Result<Vec<Example>> {
    let shape = split.client().input_shape().to_vec();
    examples
        .into_iter()
        .map(|ex| {
            let input = if ex.input.shape() == shape.as_slice() {
                ex.input
            } else {
                ex.input.reshape(&shape)?
            };
            Ok(Example {
                input,
                label: ex.label,
            })
        })
        .collect()
}

/// An input in the client's raw input space. For embedding-led clients a
/// missing `--data` synthesizes valid random indices; interaction datasets
/// are remapped onto the shared-table index space automatically.
fn pick_input(
    client: &refil_core::model::Model,
    data: &Option<String>,
    index: usize,
    seed: u64,
) -> Result<Tensor> {
    let vocab = match client.layers().first() {
        Some(refil_core::layer::Layer::EmbeddingLookup { table }) => Some(table.shape()[0]),
        _ => None,
    };
    match data {
        Some(spec) => {
            let ds = load_dataset(&dataspec::parse(spec)?)?;
            if ds.examples.is_empty() {
                return Err(Error::Data("dataset is empty".into()));
            }
            let examples = match (vocab, ds.info.users_movies) {
                (Some(v), Some((users, movies))) if users + movies == v => {
                    remap_interactions(&ds.examples, users)?
                }
                _ => ds.examples,
            };
            let ex = &examples[index % examples.len()];
            if ex.input.shape() == client.input_shape() {
                Ok(ex.input.clone())
            } else {
                ex.input.reshape(client.input_shape())
            }
        }
        None => {
            let mut rng = SeededRng::new(seed);
            let n = client.input_dim();
            let data: Vec<f32> = match vocab {
                Some(v) => (0..n).map(|_| rng.below(v) as f32).collect(),
                None => (0..n).map(|_| rng.uniform_f32()).collect(),
            };
            Ok(Tensor::new(client.input_shape().to_vec(), data)?)
        }
    }
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let client = load_model(&args.client)?;
    let estimator = parse_estimator(&args.estimator)?;
    let raw = pick_input(&client, &args.data, args.index, args.seed)?;
    // Leakage is defined on the differentiable part of the client; an
    // embedding prefix maps raw ids into that space first.
    let (prefix, diff) = client.split_embedding_prefix()?;
    let x = match &prefix {
        Some(p) => {
            println!("note            : measuring leakage of the embedded representation");
            p.forward(&raw)?
        }
        None => raw,
    };
    let mut rng = SeededRng::new(args.seed);
    let cal = calibrate_sigma(&diff, &x, args.target_dfil, estimator, &mut rng)?;
    println!("input dim d     : {}", diff.input_dim());
    println!("trace(J^T J)    : {:.6e}", cal.trace_jtj);
    if cal.degenerate {
        println!("degenerate      : zero Jacobian at this input; any sigma gives zero leakage");
        return Ok(());
    }
    println!("sigma           : {:.6e}", cal.sigma);
    let achieved = compute_dfil(&diff, &x, cal.sigma, estimator, &mut rng)?;
    println!("achieved dFIL   : {achieved:.6e}");
    println!("mse floor 1/dFIL: {:.6e}", 1.0 / achieved);
    Ok(())
}

fn cmd_attack(args: AttackArgs) -> Result<()> {
    let client = load_model(&args.client)?;
    let method = parse_method(&args.method)?;
    let estimator = parse_estimator(&args.estimator)?;
    let mut cfg = AttackConfig {
        method,
        iterations: args.iterations,
        restarts: args.restarts,
        ..AttackConfig::default()
    };
    cfg.optimizer.lr = args.lr;
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
    }

    if let Some(log_path) = &args.log {
        let entries = read_activation_log(log_path)?;
        if entries.is_empty() {
            println!("activation log is empty");
            return Ok(());
        }
        let (_, diff) = client.split_embedding_prefix()?;
        for (i, entry) in entries.iter().take(args.trials).enumerate() {
            let result = reconstruct(&entry.tensor, &diff, &cfg, None)?;
            println!(
                "entry {i}: request {} final objective {:.6e} ({} iterations)",
                entry.request_id,
                result.objective_trace.last().unwrap_or(&f64::NAN),
                result.objective_trace.len() - 1
            );
            if let Some(out) = &args.out {
                if result.x_hat.rank() >= 2 {
                    refil_core::pnm::write_image(&out.join(format!("recon_{i}.ppm")), &result.x_hat)?;
                }
            }
        }
        return Ok(());
    }

    let one_over = args.one_over_dfil.ok_or_else(|| {
        Error::InvalidArgument("--simulate mode needs --one-over-dfil (or use --log)".into())
    })?;
    let refil_cfg = RefilConfig::new(1.0 / one_over, estimator, args.seed);
    let (prefix, diff) = client.split_embedding_prefix()?;

    let mut mses = Vec::new();
    let mut ssims = Vec::new();
    for t in 0..args.trials {
        let raw = pick_input(&client, &args.data, t, derive_seed(args.seed, &[t as u64, 1]))?;
        // Attack target is the differentiable client; for embedding models
        // the truth is the embedded representation.
        let x = match &prefix {
            Some(p) => p.forward(&raw)?,
            None => raw,
        };
        let mut rng = SeededRng::new(derive_seed(args.seed, &[t as u64]));
        let noised = refil_forward(&diff, &x, &refil_cfg, &mut rng)?;
        let mut trial_cfg = cfg;
        if let AttackInit::GaussianRandom { sigma, .. } = cfg.init {
            trial_cfg.init = AttackInit::GaussianRandom {
                seed: derive_seed(args.seed, &[t as u64, 3]),
                sigma,
            };
        }
        let result = reconstruct(&noised.z_noised, &diff, &trial_cfg, Some(&x))?;
        let mse = result.mse.expect("truth supplied");
        mses.push(mse);
        if let Some(s) = result.ssim {
            ssims.push(s);
        }
        println!(
            "trial {t}: sigma {:.4e}, mse {:.6e}{}",
            noised.sigma,
            mse,
            result
                .ssim
                .map(|s| format!(", ssim {s:.4}"))
                .unwrap_or_default()
        );
        if let Some(out) = &args.out {
            if x.rank() >= 2 {
                refil_core::pnm::write_image(&out.join(format!("recon_{t}.ppm")), &result.x_hat)?;
                refil_core::pnm::write_image(&out.join(format!("truth_{t}.ppm")), &x)?;
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    println!(
        "mean mse {:.6e} over {} trials (mse floor {:.6e})",
        mean(&mses),
        mses.len(),
        one_over
    );
    if !ssims.is_empty() {
        println!("mean ssim {:.4}", mean(&ssims));
    }
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    let catalog = ServerCatalog::from_dir(&args.models)?;
    let ids: Vec<&str> = catalog.ids().collect();
    println!("serving models: {}", ids.join(", "));
    let log_mode = match args.log_activations {
        Some(path) => {
            println!("honest-but-curious logging to {}", path.display());
            LogMode::HonestButCurious { path }
        }
        None => LogMode::Off,
    };
    let handle = serve(catalog, &args.bind, log_mode)?;
    println!("listening on {}", handle.addr());
    loop {
        std::thread::park();
    }
}

fn cmd_infer(args: InferArgs) -> Result<()> {
    let client = load_model(&args.client)?;
    let estimator = parse_estimator(&args.estimator)?;
    let x = pick_input(&client, &args.data, args.index, args.seed)?;
    let cfg = RefilConfig::new(args.target_dfil, estimator, args.seed);
    let mut rng = SeededRng::new(args.seed);
    let prediction = client_infer(&client, &args.model_id, &cfg, &x, &args.server, &mut rng)?;
    println!("prediction: {prediction}");
    let best = prediction
        .data()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
        .map(|(i, _)| i);
    if let (Some(i), true) = (best, prediction.len() > 1) {
        println!("argmax: {i}");
    }
    Ok(())
}

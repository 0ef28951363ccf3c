//! `hidml` — learn a low-rank Mahalanobis metric over high-dimensional
//! feature vectors and classify with a smoothed k-NN rule.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};

use config::{CliError, Overlay, RunConfig};

#[derive(Parser)]
#[command(
    name = "hidml",
    version,
    about = "Multi-stage Mahalanobis metric learning with smoothed k-NN classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clustered dataset and write train/test CSV files
    Synth(CommonArgs),
    /// Learn a metric; writes model.bin, history.csv, and a JSON summary
    Train(CommonArgs),
    /// Classify a test set against a train set; writes metrics.json and predictions.csv
    Evaluate(CommonArgs),
    /// Project a dataset through a trained model into embedding coordinates
    Embed(CommonArgs),
    /// List the nearest training neighbors of each query under the model
    Neighbors(CommonArgs),
    /// Mine one epoch of active triplets and report violation statistics
    MineStats(CommonArgs),
}

/// Flags mirror config-file keys one-to-one (dashes for underscores).
/// Values given on the command line override values from `--config`.
#[derive(Args)]
struct CommonArgs {
    /// Flat key=value config file, or a run-manifest.json from an earlier run
    #[arg(long)]
    config: Option<std::path::PathBuf>,

    /// Random-projection dimension
    #[arg(long)]
    m: Option<usize>,
    /// Oversampled rank of the randomized factorization
    #[arg(long)]
    q: Option<usize>,
    /// Target rank of the learned factor
    #[arg(long)]
    r: Option<usize>,
    /// Number of training stages
    #[arg(long)]
    stages: Option<usize>,
    /// Proximal regularization weight (> 0)
    #[arg(long)]
    lambda: Option<f64>,
    /// Hinge smoothing width, in (0, 1]
    #[arg(long)]
    gamma: Option<f64>,
    /// SGD epochs per stage
    #[arg(long)]
    epochs: Option<usize>,
    /// Return the uniform average of SGD iterates
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    averaging: Option<bool>,
    /// Nearest same-class targets per anchor
    #[arg(long)]
    targets_per_anchor: Option<usize>,
    /// Nearest other-class impostors per anchor
    #[arg(long)]
    impostor_pool: Option<usize>,
    /// Epoch cap (default 100 * n)
    #[arg(long)]
    max_triplets: Option<usize>,
    /// Stop when a stage mines fewer than 0.1% of the epoch cap
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    early_stop: Option<bool>,
    /// Reference centers per class
    #[arg(long)]
    k: Option<usize>,
    /// Soft-min temperature (> 0)
    #[arg(long)]
    tau: Option<f64>,
    /// Master seed for every random choice
    #[arg(long)]
    seed: Option<u64>,
    /// Force the deterministic serial mode (execution is always serial)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    serial: Option<bool>,
    /// Scale every example to unit L2 norm after loading
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    normalize: Option<bool>,
    /// Read datasets in the sparse `label idx:val ...` format
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    sparse: Option<bool>,
    /// Fixed dimension for sparse files (default: largest index seen)
    #[arg(long)]
    sparse_dim: Option<usize>,
    /// Synthetic data: feature dimension
    #[arg(long)]
    d: Option<usize>,
    /// Synthetic data: total example count
    #[arg(long)]
    n: Option<usize>,
    /// Synthetic data: class count
    #[arg(long)]
    classes: Option<usize>,
    /// Synthetic data: dimensions carrying the class signal
    #[arg(long)]
    informative: Option<usize>,
    /// Synthetic data: minimum distance between class means
    #[arg(long)]
    separation: Option<f64>,
    /// Synthetic data: isotropic noise scale
    #[arg(long)]
    noise: Option<f64>,
    /// Synthetic data: fraction of examples placed in test.csv, in (0, 1)
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Neighbors listed per query
    #[arg(long)]
    count: Option<usize>,
    /// Evaluate with the raw Euclidean baseline instead of a model
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    euclid: Option<bool>,

    /// Training dataset path
    #[arg(long)]
    train: Option<String>,
    /// Validation dataset path (per-stage accuracy in the history)
    #[arg(long)]
    val: Option<String>,
    /// Test dataset path
    #[arg(long)]
    test: Option<String>,
    /// Trained model path
    #[arg(long)]
    model: Option<String>,
    /// Input dataset path for embedding
    #[arg(long)]
    data: Option<String>,
    /// Query dataset path for the neighbor listing
    #[arg(long)]
    queries: Option<String>,
    /// Output directory (default: $HIDML_OUT or ./hidml-out)
    #[arg(long)]
    out: Option<String>,
}

impl CommonArgs {
    fn to_overlay(&self) -> Overlay {
        let mut o = Overlay::default();
        o.set_opt("m", &self.m);
        o.set_opt("q", &self.q);
        o.set_opt("r", &self.r);
        o.set_opt("stages", &self.stages);
        o.set_opt("lambda", &self.lambda);
        o.set_opt("gamma", &self.gamma);
        o.set_opt("epochs", &self.epochs);
        o.set_opt("averaging", &self.averaging);
        o.set_opt("targets_per_anchor", &self.targets_per_anchor);
        o.set_opt("impostor_pool", &self.impostor_pool);
        o.set_opt("max_triplets", &self.max_triplets);
        o.set_opt("early_stop", &self.early_stop);
        o.set_opt("k", &self.k);
        o.set_opt("tau", &self.tau);
        o.set_opt("seed", &self.seed);
        o.set_opt("serial", &self.serial);
        o.set_opt("normalize", &self.normalize);
        o.set_opt("sparse", &self.sparse);
        o.set_opt("sparse_dim", &self.sparse_dim);
        o.set_opt("d", &self.d);
        o.set_opt("n", &self.n);
        o.set_opt("classes", &self.classes);
        o.set_opt("informative", &self.informative);
        o.set_opt("separation", &self.separation);
        o.set_opt("noise", &self.noise);
        o.set_opt("test_fraction", &self.test_fraction);
        o.set_opt("count", &self.count);
        o.set_opt("euclid", &self.euclid);
        o.set_opt("train", &self.train);
        o.set_opt("val", &self.val);
        o.set_opt("test", &self.test);
        o.set_opt("model", &self.model);
        o.set_opt("data", &self.data);
        o.set_opt("queries", &self.queries);
        o.set_opt("out", &self.out);
        o
    }
}

fn execute(name: &str, args: &CommonArgs) -> Result<(), CliError> {
    let mut overlay = match &args.config {
        Some(path) => Overlay::from_file(path)?,
        None => Overlay::default(),
    };
    overlay = overlay.merged_with(args.to_overlay());
    let cfg = RunConfig::resolve(name, &overlay)?;
    match name {
        "synth" => commands::synth(&cfg),
        "train" => commands::run_train(&cfg),
        "evaluate" => commands::evaluate(&cfg),
        "embed" => commands::run_embed(&cfg),
        "neighbors" => commands::neighbors(&cfg),
        "mine-stats" => commands::mine_stats(&cfg),
        other => Err(CliError::Usage(format!("unknown command {other}"))),
    }
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };
    let (name, args) = match &cli.command {
        Command::Synth(a) => ("synth", a),
        Command::Train(a) => ("train", a),
        Command::Evaluate(a) => ("evaluate", a),
        Command::Embed(a) => ("embed", a),
        Command::Neighbors(a) => ("neighbors", a),
        Command::MineStats(a) => ("mine-stats", a),
    };
    match execute(name, args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn main() {
    std::process::exit(run());
}

//! Command-line driver: fit, oracle-em, generate, imbalance, eval.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dpmix::data::{
    generate_gmm, imbalance_subsample, read_features, read_labels, write_features,
    write_float_column, write_labels, write_run, MetricsReport, RunRecord,
};
use dpmix::fit::{run_fit, run_oracle_em, FitConfig, PsiMode};
use dpmix::model::HardLabels;
use dpmix::Error;

#[derive(Parser)]
#[command(
    name = "dpmix",
    about = "Nonparametric deep clustering: infers K via split/merge moves over an amortized EM loop",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the full nonparametric pipeline to a feature CSV.
    Fit(FitArgs),
    /// Classical Bayesian EM baseline at a fixed K.
    OracleEm(OracleArgs),
    /// Generate a synthetic Gaussian mixture benchmark.
    Generate(GenerateArgs),
    /// Undersample classes to build an imbalanced variant of a dataset.
    Imbalance(ImbalanceArgs),
    /// Evaluate predicted labels against ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Initial number of clusters.
    #[arg(long, default_value_t = 1)]
    init_k: usize,
    /// Hidden width of every assignment net.
    #[arg(long, default_value_t = 50)]
    hidden: usize,
    /// Minibatch size.
    #[arg(long, default_value_t = 128)]
    batch: usize,
    /// Learning rate of the clustering net.
    #[arg(long, default_value_t = 5e-4)]
    lr_cluster: f64,
    /// Learning rate of the subcluster nets.
    #[arg(long, default_value_t = 5e-3)]
    lr_sub: f64,
    /// Dirichlet-process concentration.
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    /// Prior mean pseudocount.
    #[arg(long, default_value_t = 1e-4)]
    kappa: f64,
    /// Prior scatter pseudocount; defaults to d+2.
    #[arg(long)]
    nu: Option<f64>,
    /// Scale for the prior scatter matrix.
    #[arg(long, default_value_t = 0.005)]
    psi_scale: f64,
    /// identity-scale: psi = I*psi_scale; data-std-scale: psi = I*std(X)*psi_scale.
    #[arg(long, default_value = "identity-scale")]
    psi_mode: String,
    /// Maximum number of training epochs.
    #[arg(long, default_value_t = 500)]
    epochs_max: usize,
    /// Epoch period of split proposals.
    #[arg(long, default_value_t = 10)]
    split_every: usize,
    /// Epoch period of merge proposals (offset by half the period).
    #[arg(long, default_value_t = 10)]
    merge_every: usize,
    /// Epochs before the first proposal round.
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    /// Consecutive zero-acceptance proposal rounds before stopping.
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// Master random seed; all randomness derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable split proposals.
    #[arg(long, default_value_t = false)]
    no_splits: bool,
    /// Disable merge proposals.
    #[arg(long, default_value_t = false)]
    no_merges: bool,
}

impl ConfigArgs {
    fn to_config(&self) -> Result<FitConfig, Error> {
        Ok(FitConfig {
            init_k: self.init_k,
            hidden: self.hidden,
            batch: self.batch,
            lr_cluster: self.lr_cluster,
            lr_sub: self.lr_sub,
            alpha: self.alpha,
            kappa: self.kappa,
            nu: self.nu,
            psi_scale: self.psi_scale,
            psi_mode: self.psi_mode.parse::<PsiMode>()?,
            epochs_max: self.epochs_max,
            split_every: self.split_every,
            merge_every: self.merge_every,
            warmup: self.warmup,
            patience: self.patience,
            seed: self.seed,
            enable_splits: !self.no_splits,
            enable_merges: !self.no_merges,
        })
    }
}

#[derive(Args)]
struct FitArgs {
    /// Feature CSV (one point per row).
    features: PathBuf,
    /// Ground-truth labels for evaluation only; never read during the fit.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output directory for labels.csv, summary.json, params/.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct OracleArgs {
    /// Feature CSV (one point per row).
    features: PathBuf,
    /// Fixed number of clusters.
    #[arg(long)]
    k: usize,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of mixture components.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Number of points.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Minimum mean separation in units of the mean component stddev.
    #[arg(long, default_value_t = 8.0)]
    separation: f64,
    /// Comma-separated component weights (uniform when omitted).
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for features.csv and labels.csv.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ImbalanceArgs {
    /// Feature CSV.
    features: PathBuf,
    /// Ground-truth labels of the input.
    labels: PathBuf,
    /// Comma-separated per-class retention proportions in (0,1]; a flat
    /// Dirichlet histogram is drawn when omitted.
    #[arg(long, value_delimiter = ',')]
    proportions: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted labels, one integer per line.
    pred: PathBuf,
    /// Ground-truth labels, one integer per line.
    truth: PathBuf,
    /// Feature CSV; enables the silhouette score.
    #[arg(long)]
    features: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are normal exits.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        Error::Data { .. } | Error::Io { .. } | Error::DimensionMismatch { .. } => 2,
        Error::Domain(_) | Error::NotPositiveDefinite { .. } => 3,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::OracleEm(args) => cmd_oracle_em(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Imbalance(args) => cmd_imbalance(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn load_truth(path: &Option<PathBuf>) -> Result<Option<HardLabels>, Error> {
    match path {
        Some(p) => Ok(Some(read_labels(p)?)),
        None => Ok(None),
    }
}

fn report_summary(record: &RunRecord) {
    let final_k = record.k_trajectory.last().copied().unwrap_or(0);
    println!("epochs: {}", record.epochs);
    println!("final K: {final_k}");
    print_metrics(&record.metrics);
}

fn print_metrics(metrics: &MetricsReport) {
    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.6}"),
        None => "null".to_string(),
    };
    println!("acc: {}", fmt(metrics.acc));
    println!("nmi: {}", fmt(metrics.nmi));
    println!("ari: {}", fmt(metrics.ari));
    println!("silhouette: {}", fmt(metrics.silhouette));
}

fn cmd_fit(args: FitArgs) -> Result<(), Error> {
    let config = args.config.to_config()?;
    let data = read_features(&args.features)?;
    let truth = load_truth(&args.truth)?;
    let record = run_fit(data, config, truth.as_ref())?;
    write_run(&record, &args.out)?;
    report_summary(&record);
    println!("artifacts: {}", args.out.display());
    Ok(())
}

fn cmd_oracle_em(args: OracleArgs) -> Result<(), Error> {
    let config = args.config.to_config()?;
    let data = read_features(&args.features)?;
    let truth = load_truth(&args.truth)?;
    let (record, trace) = run_oracle_em(data, args.k, config, truth.as_ref())?;
    write_run(&record, &args.out)?;
    write_float_column(&args.out.join("trace.csv"), &trace)?;
    report_summary(&record);
    println!("artifacts: {}", args.out.display());
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<(), Error> {
    let generated = generate_gmm(
        args.k,
        args.n,
        args.d,
        args.separation,
        args.weights.as_deref(),
        args.seed,
    )?;
    std::fs::create_dir_all(&args.out).map_err(|source| Error::Io {
        path: args.out.display().to_string(),
        source,
    })?;
    write_features(&args.out.join("features.csv"), &generated.data)?;
    write_labels(&args.out.join("labels.csv"), &generated.labels.z)?;
    println!(
        "generated {} points in {} dims from {} components (seed {})",
        args.n, args.d, args.k, args.seed
    );
    println!("artifacts: {}", args.out.display());
    Ok(())
}

fn cmd_imbalance(args: ImbalanceArgs) -> Result<(), Error> {
    let data = read_features(&args.features)?;
    let labels = read_labels(&args.labels)?;
    let sub = imbalance_subsample(&data, &labels, args.proportions.as_deref(), args.seed)?;
    std::fs::create_dir_all(&args.out).map_err(|source| Error::Io {
        path: args.out.display().to_string(),
        source,
    })?;
    write_features(&args.out.join("features.csv"), &sub.data)?;
    write_labels(&args.out.join("labels.csv"), &sub.labels.z)?;
    let meta = serde_json::json!({
        "kept": sub.data.n(),
        "original": data.n(),
        "proportions": sub.proportions,
        "seed": args.seed,
    });
    std::fs::write(
        args.out.join("imbalance.json"),
        serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )
    .map_err(|source| Error::Io {
        path: args.out.join("imbalance.json").display().to_string(),
        source,
    })?;
    println!(
        "kept {} of {} points (proportions {:?})",
        sub.data.n(),
        data.n(),
        sub.proportions
    );
    println!("artifacts: {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let pred = read_labels(&args.pred)?;
    let truth = read_labels(&args.truth)?;
    let metrics = MetricsReport {
        acc: Some(dpmix::metrics::clustering_accuracy(&pred, &truth)?),
        nmi: Some(dpmix::metrics::nmi(&pred, &truth)?),
        ari: Some(dpmix::metrics::ari(&pred, &truth)?),
        silhouette: match &args.features {
            Some(path) => {
                let data = read_features(path)?;
                if pred.distinct() >= 2 {
                    Some(dpmix::metrics::silhouette(&data, &pred)?)
                } else {
                    None
                }
            }
            None => None,
        },
    };
    print_metrics(&metrics);
    Ok(())
}

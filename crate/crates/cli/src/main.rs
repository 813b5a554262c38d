use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use preflab::config::{ExperimentConfig, ExperimentKind};
use preflab::experiments::{run_experiment, write_csv};
use preflab::truth::{gen_ground_truth, GroundTruth};
use preflab_core::connectivity::{
    tabular_connectivity, variational_connectivity, HypothesisClass, TestDistributionQ,
    VariationalConfig,
};
use preflab_core::design::{alpha_negative, bt_consistent_pair, rank_normalize, sample_triplets, scale_score};
use preflab_core::items::TripletDataset;
use preflab_core::represent::{check_bt_representable, product_distribution};
use preflab_core::scorers::{ModelInputs, ModelSpec};
use preflab_core::tabular::{cprd_from_counts, TabularTripletDistribution};
use preflab_core::training::{train_bt, TrainConfig};

/// Numerical laboratory for preference learning from pairwise comparisons.
#[derive(Parser)]
#[command(name = "preflab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate Gaussian items plus a frozen cosine-MLP ground truth.
    Gen(GenArgs),
    /// Sample a triplet dataset from a BT-consistent distribution.
    Sample(SampleArgs),
    /// Train a cosine-MLP score model on triplet CSVs.
    Train(TrainArgs),
    /// Check a dataset's empirical CPRD for BT representability.
    Diagnose(DiagnoseArgs),
    /// Estimate the connectivity degree of a distribution.
    Connectivity(ConnArgs),
    /// Run a full experiment grid and write its CSV.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 16)]
    m: usize,
    #[arg(long, default_value_t = 128)]
    d: usize,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 8)]
    embed: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    /// Ground-truth JSON from `preflab gen`.
    #[arg(long)]
    truth: PathBuf,
    /// Rank-normalize the target before building the distribution.
    #[arg(long)]
    rank: bool,
    /// Negative-distribution temperature (0 = uniform).
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Target scale.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    truth: PathBuf,
    /// Training triplets CSV.
    #[arg(long)]
    data: PathBuf,
    /// Validation triplets CSV.
    #[arg(long)]
    val: PathBuf,
    /// Optional TrainConfig JSON; defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output JSON path for the train result (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional CSV path for the per-epoch loss history.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Triplets CSV.
    #[arg(long)]
    data: PathBuf,
    /// Item-universe size.
    #[arg(long)]
    m: usize,
    /// Edge-verification tolerance.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Output JSON path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConnArgs {
    /// Single-context table JSON for the exact spectral value.
    #[arg(long, conflicts_with = "truth")]
    table: Option<PathBuf>,
    /// Ground-truth JSON for the variational estimate of a BT-consistent
    /// distribution.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExperimentArgs {
    /// One of: margin, alpha_sweep, conn_optimize.
    name: String,
    /// Experiment config JSON; defaults for the named experiment otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replaces the config's seed list with seed..seed+5.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path (config's output_path otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen(args) => cmd_gen(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Train(args) => cmd_train(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Connectivity(args) => cmd_connectivity(args),
        Command::Experiment(args) => cmd_experiment(args),
    }
}

fn emit(value: &serde_json::Value, out: Option<PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(&path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn load_truth(path: &PathBuf) -> Result<GroundTruth> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(GroundTruth::from_json(&serde_json::from_str(&text)?)?)
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let truth = gen_ground_truth(args.m, args.d, args.hidden, args.embed, args.seed)?;
    emit(&truth.to_json(), args.out)
}

/// The (possibly rank-normalized, scaled) target table of a truth file.
fn shaped_target(truth: &GroundTruth, rank: bool, beta: f64) -> Result<Array2<f64>> {
    let base = if rank {
        rank_normalize(&truth.table)
    } else {
        truth.table.clone()
    };
    Ok(scale_score(&base, beta)?)
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let truth = load_truth(&args.truth)?;
    let target = shaped_target(&truth, args.rank, args.beta)?;
    let p_minus = alpha_negative(&target, args.alpha)?;
    let pair = bt_consistent_pair(&target, &p_minus)?;
    let data = sample_triplets(&pair, args.n, args.seed)?;
    data.write_csv_path(&args.out)?;
    eprintln!("wrote {} triplets to {}", data.len(), args.out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let truth = load_truth(&args.truth)?;
    let train_data = TripletDataset::read_csv_path(&args.data)?;
    let val_data = TripletDataset::read_csv_path(&args.val)?;
    train_data.validate_against(truth.m())?;
    val_data.validate_against(truth.m())?;
    let mut config: TrainConfig = match &args.config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let spec = ModelSpec::CosineMlp {
        input: truth.items.d(),
        hidden: 32,
        embed: 8,
    };
    let result = train_bt(
        spec,
        ModelInputs::items(&truth.items),
        &train_data,
        &val_data,
        &config,
    )?;
    if let Some(path) = &args.history {
        std::fs::write(path, result.history_csv())?;
    }
    emit(&result.to_json(), args.out)
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<()> {
    let data = TripletDataset::read_csv_path(&args.data)?;
    let cprd = cprd_from_counts(&data, args.m)?;
    let verdict = check_bt_representable(&cprd, args.tol)?;
    emit(&verdict.to_json(), args.out)
}

fn cmd_connectivity(args: ConnArgs) -> Result<()> {
    let estimate = if let Some(table_path) = &args.table {
        let text = std::fs::read_to_string(table_path)?;
        let dist = TabularTripletDistribution::from_json(&serde_json::from_str(&text)?)?;
        tabular_connectivity(&dist)?
    } else if let Some(truth_path) = &args.truth {
        let truth = load_truth(truth_path)?;
        let target = shaped_target(&truth, false, args.beta)?;
        let p_minus = alpha_negative(&target, args.alpha)?;
        let pair = bt_consistent_pair(&target, &p_minus)?;
        let dist = product_distribution(&pair);
        let q = TestDistributionQ::uniform(truth.m(), truth.m());
        let class = HypothesisClass::CosineMlp {
            items: &truth.items,
            hidden: 32,
            embed: 8,
        };
        let cfg = VariationalConfig {
            restarts: args.restarts,
            steps: args.steps,
            seed: args.seed,
            ..VariationalConfig::default()
        };
        variational_connectivity(&dist, &q, class, &cfg)?
    } else {
        bail!("provide --table for the spectral value or --truth for the variational estimate");
    };
    println!("{}", serde_json::to_string_pretty(&estimate.to_json())?);
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let kind = ExperimentKind::parse(&args.name)?;
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let cfg = ExperimentConfig::from_json_str(&text)?;
            if cfg.experiment != kind {
                bail!(
                    "config is for {}, requested {}",
                    cfg.experiment.name(),
                    kind.name()
                );
            }
            cfg
        }
        None => ExperimentConfig::defaults(kind),
    };
    if let Some(seed) = args.seed {
        cfg.seeds = (seed..seed + 5).collect();
    }
    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from(cfg.output_path.clone()));
    let records = run_experiment(&cfg)?;
    write_csv(&records, kind.name(), &out)?;
    eprintln!("wrote {} rows to {}", records.len(), out.display());
    Ok(())
}

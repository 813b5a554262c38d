//! The three synthetic studies, each a grid of independent seeded cells
//! emitting one CSV row per (variant, n, seed).
//!
//! - `margin`: raw vs rank-normalized targets over a dataset-size grid;
//! - `alpha_sweep`: exponentially tilted negatives over a temperature grid,
//!   with the variational connectivity of each induced distribution;
//! - `conn_optimize`: per target scale beta, uniform negatives vs negatives
//!   optimized to maximize connectivity, trained and evaluated side by side.
//!
//! Cells run in parallel (capped by `PREFLAB_THREADS`) with all randomness
//! derived from the cell key, so the output is byte-identical across runs
//! and thread schedules.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use preflab_core::connectivity::{
    optimize_negative_for_connectivity, variational_connectivity, GdaConfig, HypothesisClass,
    TestDistributionQ, VariationalConfig,
};
use preflab_core::design::{alpha_negative, bt_consistent_pair, rank_normalize, sample_triplets, scale_score};
use preflab_core::error::{Error, Result};
use preflab_core::evaluation::{accuracy, bottom_fraction_accuracy, estimation_error};
use preflab_core::represent::product_distribution;
use preflab_core::rng::derive_seed_tagged;
use preflab_core::scorers::{ModelInputs, ModelSpec, ScoreTable};
use preflab_core::training::{train_bt, TrainConfig};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::truth::{gen_ground_truth, GroundTruth};

/// One CSV row of experiment output.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub experiment: String,
    pub seed: u64,
    pub n: usize,
    pub variant: String,
    pub accuracy: f64,
    pub acc_bottom10: f64,
    pub acc_bottom30: f64,
    pub lambda_conn: f64,
    pub estimation_error: f64,
    pub final_val_loss: f64,
    pub status: String,
}

pub const CSV_HEADER: &str =
    "experiment,seed,n,variant,accuracy,acc_bottom10,acc_bottom30,lambda_conn,estimation_error,final_val_loss,status";

impl RunRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.experiment,
            self.seed,
            self.n,
            self.variant,
            self.accuracy,
            self.acc_bottom10,
            self.acc_bottom30,
            self.lambda_conn,
            self.estimation_error,
            self.final_val_loss,
            self.status
        )
    }
}

/// Header comment plus fixed header plus one row per record. Everything
/// after the `#` comment line is deterministic.
pub fn records_to_csv(records: &[RunRecord], experiment: &str) -> String {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut out = format!("# preflab experiment={experiment} generated={stamp}\n");
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn write_csv(records: &[RunRecord], experiment: &str, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(records_to_csv(records, experiment).as_bytes())?;
    Ok(())
}

/// Run the configured experiment on a worker pool sized by
/// `PREFLAB_THREADS` (all cores when unset).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("PREFLAB_THREADS") {
        if let Ok(threads) = raw.parse::<usize>() {
            if threads > 0 {
                builder = builder.num_threads(threads);
            }
        }
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;
    pool.install(|| match cfg.experiment {
        ExperimentKind::Margin => run_margin(cfg),
        ExperimentKind::AlphaSweep => run_alpha_sweep(cfg),
        ExperimentKind::ConnOptimize => run_conn_optimize(cfg),
    })
}

/// Metrics of one trained cell.
struct CellOutcome {
    accuracy: f64,
    acc_bottom10: f64,
    acc_bottom30: f64,
    estimation_error: f64,
    final_val_loss: f64,
    status: &'static str,
}

impl CellOutcome {
    fn diverged() -> Self {
        Self {
            accuracy: f64::NAN,
            acc_bottom10: f64::NAN,
            acc_bottom30: f64::NAN,
            estimation_error: f64::NAN,
            final_val_loss: f64::NAN,
            status: "diverged",
        }
    }
}

/// Build a BT-consistent distribution for `target` over `p_minus`, sample
/// `n` training and `validation_size` validation triplets, train a fresh
/// cosine MLP, and evaluate against `eval_target` (subset selection and
/// sign agreement) and `target` (margin estimation error).
#[allow(clippy::too_many_arguments)]
fn learning_cell(
    truth: &GroundTruth,
    hidden: usize,
    embed: usize,
    target: &ScoreTable,
    eval_target: &ScoreTable,
    p_minus: &Array2<f64>,
    n: usize,
    seed: u64,
    label: &str,
    train_cfg: &TrainConfig,
) -> Result<CellOutcome> {
    let pair = bt_consistent_pair(target, p_minus)?;
    let train_data = sample_triplets(&pair, n, derive_seed_tagged(seed, label, &[n as u64, 1]))?;
    let val_data = sample_triplets(
        &pair,
        train_cfg.validation_size.max(1),
        derive_seed_tagged(seed, label, &[n as u64, 2]),
    )?;
    let cfg = TrainConfig {
        seed: derive_seed_tagged(seed, label, &[n as u64, 3]),
        ..train_cfg.clone()
    };
    let inputs = ModelInputs::items(&truth.items);
    let spec = ModelSpec::CosineMlp {
        input: truth.items.d(),
        hidden,
        embed,
    };
    let result = match train_bt(spec, inputs, &train_data, &val_data, &cfg) {
        Ok(result) => result,
        Err(Error::TrainingDiverged) => return Ok(CellOutcome::diverged()),
        Err(e) => return Err(e),
    };
    let fitted = result.model.score_table(inputs);
    let q = TestDistributionQ::uniform(truth.m(), truth.m());
    Ok(CellOutcome {
        accuracy: accuracy(&fitted, eval_target, &q)?,
        acc_bottom10: bottom_fraction_accuracy(&fitted, eval_target, &q, 0.10)?,
        acc_bottom30: bottom_fraction_accuracy(&fitted, eval_target, &q, 0.30)?,
        estimation_error: estimation_error(&fitted, target, &q),
        final_val_loss: result.final_validation_loss,
        status: "ok",
    })
}

/// Variational connectivity of the BT-consistent distribution for `target`
/// over `p_minus`, under the learner's own hypothesis class.
fn cell_connectivity(
    truth: &GroundTruth,
    hidden: usize,
    embed: usize,
    target: &ScoreTable,
    p_minus: &Array2<f64>,
    base: &VariationalConfig,
    seed: u64,
    label: &str,
) -> Result<f64> {
    let pair = bt_consistent_pair(target, p_minus)?;
    let dist = product_distribution(&pair);
    let q = TestDistributionQ::uniform(truth.m(), truth.m());
    let class = HypothesisClass::CosineMlp {
        items: &truth.items,
        hidden,
        embed,
    };
    let cfg = VariationalConfig {
        seed: derive_seed_tagged(seed, label, &[]),
        ..*base
    };
    Ok(variational_connectivity(&dist, &q, class, &cfg)?.value)
}

fn run_margin(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let truth = gen_ground_truth(cfg.m, cfg.d, cfg.hidden, cfg.embed, cfg.truth_seed)?;
    let raw = truth.table.clone();
    let rank = rank_normalize(&raw);
    let uniform = Array2::from_elem((cfg.m, cfg.m), 1.0 / cfg.m as f64);
    let variants: [(&str, &ScoreTable); 2] = [("raw", &raw), ("rank", &rank)];

    // Connectivity depends only on (variant, seed); shared across n.
    let lam_keys: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let lambdas: HashMap<(usize, u64), f64> = lam_keys
        .par_iter()
        .map(|&(v, s)| {
            let label = format!("margin-conn/{}", variants[v].0);
            cell_connectivity(
                &truth,
                cfg.hidden,
                cfg.embed,
                variants[v].1,
                &uniform,
                &cfg.variational,
                s,
                &label,
            )
            .map(|lam| ((v, s), lam))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();

    let cells: Vec<(usize, usize, u64)> = (0..variants.len())
        .flat_map(|v| {
            cfg.n_grid
                .iter()
                .flat_map(move |&n| cfg.seeds.iter().map(move |&s| (v, n, s)))
        })
        .collect();
    cells
        .par_iter()
        .map(|&(v, n, s)| {
            let (name, target) = variants[v];
            let label = format!("margin/{name}");
            let out = learning_cell(
                &truth, cfg.hidden, cfg.embed, target, &raw, &uniform, n, s, &label, &cfg.train,
            )?;
            Ok(RunRecord {
                experiment: "margin".into(),
                seed: s,
                n,
                variant: name.into(),
                accuracy: out.accuracy,
                acc_bottom10: out.acc_bottom10,
                acc_bottom30: out.acc_bottom30,
                lambda_conn: lambdas[&(v, s)],
                estimation_error: out.estimation_error,
                final_val_loss: out.final_val_loss,
                status: out.status.into(),
            })
        })
        .collect()
}

fn run_alpha_sweep(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let truth = gen_ground_truth(cfg.m, cfg.d, cfg.hidden, cfg.embed, cfg.truth_seed)?;
    let target = truth.table.clone();

    let lam_keys: Vec<(usize, u64)> = (0..cfg.alpha_grid.len())
        .flat_map(|a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let lambdas: HashMap<(usize, u64), f64> = lam_keys
        .par_iter()
        .map(|&(a, s)| {
            let p_minus = alpha_negative(&target, cfg.alpha_grid[a])?;
            let label = format!("alpha-conn/{a}");
            cell_connectivity(
                &truth,
                cfg.hidden,
                cfg.embed,
                &target,
                &p_minus,
                &cfg.variational,
                s,
                &label,
            )
            .map(|lam| ((a, s), lam))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();

    let cells: Vec<(usize, usize, u64)> = (0..cfg.alpha_grid.len())
        .flat_map(|a| {
            cfg.n_grid
                .iter()
                .flat_map(move |&n| cfg.seeds.iter().map(move |&s| (a, n, s)))
        })
        .collect();
    cells
        .par_iter()
        .map(|&(a, n, s)| {
            let alpha = cfg.alpha_grid[a];
            let p_minus = alpha_negative(&target, alpha)?;
            let label = format!("alpha/{a}");
            let out = learning_cell(
                &truth, cfg.hidden, cfg.embed, &target, &target, &p_minus, n, s, &label,
                &cfg.train,
            )?;
            Ok(RunRecord {
                experiment: "alpha_sweep".into(),
                seed: s,
                n,
                variant: format!("alpha={alpha}"),
                accuracy: out.accuracy,
                acc_bottom10: out.acc_bottom10,
                acc_bottom30: out.acc_bottom30,
                lambda_conn: lambdas[&(a, s)],
                estimation_error: out.estimation_error,
                final_val_loss: out.final_val_loss,
                status: out.status.into(),
            })
        })
        .collect()
}

fn run_conn_optimize(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let truth = gen_ground_truth(cfg.m, cfg.d, cfg.hidden, cfg.embed, cfg.truth_seed)?;
    let q = TestDistributionQ::uniform(cfg.m, cfg.m);
    let uniform = Array2::from_elem((cfg.m, cfg.m), 1.0 / cfg.m as f64);

    // Phase 1: one negative-distribution optimization per (beta, seed).
    struct GdaCell {
        p_optimized: Array2<f64>,
        lambda_optimized: f64,
        lambda_uniform: f64,
    }
    let gda_keys: Vec<(usize, u64)> = (0..cfg.beta_grid.len())
        .flat_map(|b| cfg.seeds.iter().map(move |&s| (b, s)))
        .collect();
    let gda: HashMap<(usize, u64), GdaCell> = gda_keys
        .par_iter()
        .map(|&(b, s)| {
            let target = scale_score(&truth.table, cfg.beta_grid[b])?;
            let class = HypothesisClass::CosineMlp {
                items: &truth.items,
                hidden: cfg.hidden,
                embed: cfg.embed,
            };
            let gda_cfg = GdaConfig {
                seed: derive_seed_tagged(s, "gda", &[b as u64]),
                estimate: VariationalConfig {
                    seed: derive_seed_tagged(s, "gda-estimate", &[b as u64]),
                    ..cfg.variational
                },
                ..cfg.gda
            };
            let out = optimize_negative_for_connectivity(&target, &q, class, &gda_cfg)?;
            Ok((
                (b, s),
                GdaCell {
                    p_optimized: out.p_minus,
                    lambda_optimized: out.achieved.value,
                    lambda_uniform: out.uniform_baseline.value,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();

    // Phase 2: train and evaluate both variants.
    let cells: Vec<(usize, usize, usize, u64)> = (0..cfg.beta_grid.len())
        .flat_map(|b| {
            (0..2usize).flat_map(move |v| {
                cfg.n_grid
                    .iter()
                    .flat_map(move |&n| cfg.seeds.iter().map(move |&s| (b, v, n, s)))
            })
        })
        .collect();
    cells
        .par_iter()
        .map(|&(b, v, n, s)| {
            let beta = cfg.beta_grid[b];
            let target = scale_score(&truth.table, beta)?;
            let gda_cell = &gda[&(b, s)];
            let (vname, p_minus, lambda) = if v == 0 {
                ("uniform", &uniform, gda_cell.lambda_uniform)
            } else {
                ("optimized", &gda_cell.p_optimized, gda_cell.lambda_optimized)
            };
            let label = format!("conn/{vname}/{b}");
            let out = learning_cell(
                &truth, cfg.hidden, cfg.embed, &target, &target, p_minus, n, s, &label,
                &cfg.train,
            )?;
            Ok(RunRecord {
                experiment: "conn_optimize".into(),
                seed: s,
                n,
                variant: format!("beta={beta}/{vname}"),
                accuracy: out.accuracy,
                acc_bottom10: out.acc_bottom10,
                acc_bottom30: out.acc_bottom30,
                lambda_conn: lambda,
                estimation_error: out.estimation_error,
                final_val_loss: out.final_val_loss,
                status: out.status.into(),
            })
        })
        .collect()
}

//! The discriminative Bradley-Terry objective, its KL-projection reading,
//! and Adam training with validation-based learning-rate selection.
//!
//! The empirical risk is the mean negative log-likelihood
//! `-(1/n) sum_i log sigma(margin_i)`; the population risk is its exact
//! expectation under a probability table. The population risk decomposes as
//! `C + Z * E_{comparison}[KL(Bern(omega) || Bern(sigma(margin)))]` with `C`
//! independent of the model, which [`kl_decomposition`] computes and checks.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::items::TripletDataset;
use crate::optim::{Adam, AdamConfig};
use crate::rng;
use crate::scorers::{ModelInputs, ModelSpec, ScoreModel};
use crate::tabular::{comparison_distribution, cprd_from_distribution, Cprd,
    TabularTripletDistribution};

/// The BT link function.
pub fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Numerically stable `ln(1 + exp(z))`; `-ln sigma(t) = softplus(-t)`.
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rates: Vec<f64>,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub validation_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rates: vec![1e-4, 1e-3, 1e-2],
            batch_size: 256,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            validation_size: 2048,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.learning_rates.is_empty() || self.learning_rates.iter().any(|&lr| lr <= 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: ScoreModel,
    pub selected_lr: f64,
    pub loss_history: Vec<EpochLoss>,
    pub final_validation_loss: f64,
}

impl TrainResult {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.model.to_json(),
            "selected_lr": self.selected_lr,
            "loss_history": self.loss_history,
            "final_validation_loss": self.final_validation_loss,
        })
    }

    /// Loss history as CSV `epoch,train_loss,val_loss`.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.loss_history {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
        }
        out
    }
}

/// Mean negative log-likelihood of a dataset under the BT model.
pub fn bt_empirical_loss(
    model: &ScoreModel,
    inputs: ModelInputs<'_>,
    data: &TripletDataset,
) -> f64 {
    let table = model.score_table(inputs);
    empirical_loss_from_table(&table, data)
}

fn empirical_loss_from_table(table: &Array2<f64>, data: &TripletDataset) -> f64 {
    let mut total = 0.0;
    for t in &data.triplets {
        let margin = table[[t.context_id, t.pos_id]] - table[[t.context_id, t.neg_id]];
        total += softplus(-margin);
    }
    total / data.len() as f64
}

/// Exact expectation of the negative log-likelihood under a table.
/// Diagonal cells contribute `ln 2` each.
pub fn bt_population_loss(
    model: &ScoreModel,
    inputs: ModelInputs<'_>,
    dist: &TabularTripletDistribution,
) -> f64 {
    let table = model.score_table(inputs);
    let mut total = 0.0;
    for x in 0..dist.contexts() {
        let px = dist.marginal()[x];
        if px == 0.0 {
            continue;
        }
        let t = dist.table(x);
        for i in 0..dist.items() {
            for j in 0..dist.items() {
                let w = t[[i, j]];
                if w > 0.0 {
                    let margin = table[[x, i]] - table[[x, j]];
                    total += px * w * softplus(-margin);
                }
            }
        }
    }
    total
}

/// Gradient of [`bt_population_loss`] with respect to the flat parameters.
pub fn bt_population_gradient(
    model: &ScoreModel,
    inputs: ModelInputs<'_>,
    dist: &TabularTripletDistribution,
) -> Array1<f64> {
    let table = model.score_table(inputs);
    let mut cot = Array2::zeros(table.dim());
    for x in 0..dist.contexts() {
        let px = dist.marginal()[x];
        if px == 0.0 {
            continue;
        }
        let t = dist.table(x);
        for i in 0..dist.items() {
            for j in 0..dist.items() {
                if i == j {
                    continue;
                }
                let w = px * t[[i, j]];
                if w > 0.0 {
                    let margin = table[[x, i]] - table[[x, j]];
                    // d/d margin of softplus(-margin) = -sigma(-margin).
                    let d = -w * sigmoid(-margin);
                    cot[[x, i]] += d;
                    cot[[x, j]] -= d;
                }
            }
        }
    }
    model.score_table_vjp(inputs, &cot)
}

/// The decomposition `L_BT = C + Z * E[KL]` of the population objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlDecomposition {
    /// Model-independent constant: diagonal `ln 2` mass plus the
    /// comparison-weighted entropy of the CPRD.
    pub c: f64,
    /// Normalizer of the comparison distribution (off-diagonal joint mass).
    pub z: f64,
    /// Comparison-weighted Bernoulli KL between the CPRD and the model.
    pub expected_kl: f64,
    /// `c + z * expected_kl`; equals the population loss.
    pub reconstructed: f64,
}

/// Decompose the population BT loss of `model` on `dist`.
pub fn kl_decomposition(
    dist: &TabularTripletDistribution,
    model: &ScoreModel,
    inputs: ModelInputs<'_>,
) -> KlDecomposition {
    let table = model.score_table(inputs);
    let ln2 = std::f64::consts::LN_2;
    let diag = dist.diagonal_mass() * ln2;
    let cmp = match comparison_distribution(dist) {
        Ok(cmp) => cmp,
        Err(_) => {
            // All mass on the diagonal: the loss is the constant alone.
            return KlDecomposition {
                c: diag,
                z: 0.0,
                expected_kl: 0.0,
                reconstructed: diag,
            };
        }
    };
    let cprd = cprd_from_distribution(dist);
    let mut entropy_term = 0.0;
    let mut kl_term = 0.0;
    for (x, i, j, w) in cmp.iter_pairs() {
        let omega = cprd.omega(x, i, j);
        let margin = table[[x, i]] - table[[x, j]];
        let h = bernoulli_entropy(omega);
        // Cross entropy of Bern(omega) against Bern(sigma(margin)).
        let ce = omega * softplus(-margin) + (1.0 - omega) * softplus(margin);
        entropy_term += w * h;
        kl_term += w * (ce - h);
    }
    let c = diag + cmp.z() * entropy_term;
    let expected_kl = kl_term;
    KlDecomposition {
        c,
        z: cmp.z(),
        expected_kl,
        reconstructed: c + cmp.z() * expected_kl,
    }
}

fn bernoulli_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Fit a BT score model by Adam over a learning-rate grid.
///
/// Each rate runs `config.epochs` full passes in shuffled mini-batches from
/// its own derived RNG stream; the rate with the lowest final validation
/// loss wins. Rates that produce a non-finite loss are dropped from the
/// selection; if all diverge, [`Error::TrainingDiverged`] is returned.
pub fn train_bt(
    spec: ModelSpec,
    inputs: ModelInputs<'_>,
    train_data: &TripletDataset,
    val_data: &TripletDataset,
    config: &TrainConfig,
) -> Result<TrainResult> {
    config.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::invalid("train and validation sets must be nonempty"));
    }
    let mut best: Option<TrainResult> = None;
    for (rate_index, &lr) in config.learning_rates.iter().enumerate() {
        let outcome = train_single_rate(spec, inputs, train_data, val_data, config, lr, rate_index);
        if let Some(result) = outcome {
            let better = match &best {
                None => true,
                Some(b) => result.final_validation_loss < b.final_validation_loss,
            };
            if better {
                best = Some(result);
            }
        }
    }
    best.ok_or(Error::TrainingDiverged)
}

fn train_single_rate(
    spec: ModelSpec,
    inputs: ModelInputs<'_>,
    train_data: &TripletDataset,
    val_data: &TripletDataset,
    config: &TrainConfig,
    lr: f64,
    rate_index: usize,
) -> Option<TrainResult> {
    // All rates start from the same deterministic initialization; batch
    // order comes from a per-rate stream.
    let init_seed = rng::derive_seed_tagged(config.seed, "train-init", &[]);
    let mut model = ScoreModel::init(spec, init_seed);
    model.project_tabular_mean_zero();
    let mut batch_rng = rng::stream_tagged(config.seed, "train-batches", &[rate_index as u64]);
    let mut adam = Adam::new(model.param_count(), config.adam());
    let n = train_data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut batch_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let table = model.score_table(inputs);
            let mut cot = Array2::zeros(table.dim());
            let mut batch_loss = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let t = &train_data.triplets[idx];
                let margin = table[[t.context_id, t.pos_id]] - table[[t.context_id, t.neg_id]];
                batch_loss += softplus(-margin);
                let d = -sigmoid(-margin) * scale;
                cot[[t.context_id, t.pos_id]] += d;
                cot[[t.context_id, t.neg_id]] -= d;
            }
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return None;
            }
            epoch_loss += batch_loss * batch.len() as f64;
            let grad = model.score_table_vjp(inputs, &cot);
            adam.step(model.params_mut(), &grad, lr);
            model.project_tabular_mean_zero();
        }
        let train_loss = epoch_loss / n as f64;
        let val_loss = bt_empirical_loss(&model, inputs, val_data);
        if !val_loss.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
            return None;
        }
        history.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
    }
    let final_validation_loss = history.last().expect("epochs >= 1").val_loss;
    Some(TrainResult {
        model,
        selected_lr: lr,
        loss_history: history,
        final_validation_loss,
    })
}

/// CPRD recovered by the generative route: the tabular MLE of the triplet
/// distribution is the empirical frequency table, so its preference ratios
/// are exactly the count ratios of [`crate::tabular::cprd_from_counts`].
pub fn generative_recovered_cprd(data: &TripletDataset, m: usize) -> Result<Cprd> {
    crate::tabular::cprd_from_counts(data, m)
}

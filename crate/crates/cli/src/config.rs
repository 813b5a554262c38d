//! Experiment configuration: JSON-loadable, with per-experiment defaults.

use preflab_core::connectivity::{GdaConfig, VariationalConfig};
use preflab_core::error::{Error, Result};
use preflab_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Margin,
    AlphaSweep,
    ConnOptimize,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Margin => "margin",
            ExperimentKind::AlphaSweep => "alpha_sweep",
            ExperimentKind::ConnOptimize => "conn_optimize",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "margin" => Ok(ExperimentKind::Margin),
            "alpha_sweep" => Ok(ExperimentKind::AlphaSweep),
            "conn_optimize" => Ok(ExperimentKind::ConnOptimize),
            other => Err(Error::InvalidInput(format!("unknown experiment {other}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_embed")]
    pub embed: usize,
    /// Ground-truth seed; per-cell streams derive from the entries of
    /// `seeds`, this only fixes the task instance.
    #[serde(default)]
    pub truth_seed: u64,
    /// Dataset sizes. Empty means the experiment default.
    #[serde(default)]
    pub n_grid: Vec<usize>,
    /// Negative-temperature grid for the alpha sweep.
    #[serde(default)]
    pub alpha_grid: Vec<f64>,
    /// Target-scale grid for the connectivity-optimization study.
    #[serde(default)]
    pub beta_grid: Vec<f64>,
    /// One independent replication per seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub variational: VariationalConfig,
    #[serde(default)]
    pub gda: GdaConfig,
    #[serde(default)]
    pub output_path: String,
}

fn default_m() -> usize {
    16
}
fn default_d() -> usize {
    128
}
fn default_hidden() -> usize {
    32
}
fn default_embed() -> usize {
    8
}

impl ExperimentConfig {
    pub fn defaults(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            m: default_m(),
            d: default_d(),
            hidden: default_hidden(),
            embed: default_embed(),
            truth_seed: 0,
            n_grid: Vec::new(),
            alpha_grid: Vec::new(),
            beta_grid: Vec::new(),
            seeds: Vec::new(),
            train: TrainConfig::default(),
            variational: VariationalConfig::default(),
            gda: GdaConfig::default(),
            output_path: String::new(),
        }
        .normalized()
    }

    /// Fill empty grids with the experiment defaults.
    pub fn normalized(mut self) -> Self {
        if self.seeds.is_empty() {
            self.seeds = (0..5).collect();
        }
        if self.n_grid.is_empty() {
            self.n_grid = match self.experiment {
                ExperimentKind::Margin => vec![1024, 2048, 4096, 8192, 16384],
                _ => vec![4096],
            };
        }
        if self.alpha_grid.is_empty() {
            // 9 evenly spaced values over [-16, 16].
            self.alpha_grid = (0..9).map(|k| -16.0 + 4.0 * k as f64).collect();
        }
        if self.beta_grid.is_empty() {
            self.beta_grid = vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
        }
        if self.output_path.is_empty() {
            self.output_path = format!("{}.csv", self.experiment.name());
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidInput("m must be >= 2".into()));
        }
        if self.seeds.is_empty() || self.n_grid.is_empty() {
            return Err(Error::InvalidInput("seeds and n_grid must be nonempty".into()));
        }
        match self.experiment {
            ExperimentKind::AlphaSweep if self.alpha_grid.is_empty() => {
                Err(Error::InvalidInput("alpha_grid must be nonempty".into()))
            }
            ExperimentKind::ConnOptimize if self.beta_grid.is_empty() => {
                Err(Error::InvalidInput("beta_grid must be nonempty".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        let cfg = cfg.normalized();
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_protocol() {
        let cfg = ExperimentConfig::defaults(ExperimentKind::Margin);
        assert_eq!(cfg.m, 16);
        assert_eq!(cfg.d, 128);
        assert_eq!(cfg.hidden, 32);
        assert_eq!(cfg.embed, 8);
        assert_eq!(cfg.seeds.len(), 5);
        assert_eq!(cfg.n_grid, vec![1024, 2048, 4096, 8192, 16384]);
        assert_eq!(cfg.train.epochs, 200);
        assert_eq!(cfg.train.learning_rates, vec![1e-4, 1e-3, 1e-2]);
        assert_eq!(cfg.train.validation_size, 2048);
    }

    #[test]
    fn alpha_grid_spans_sixteen() {
        let cfg = ExperimentConfig::defaults(ExperimentKind::AlphaSweep);
        assert_eq!(cfg.alpha_grid.len(), 9);
        assert_eq!(cfg.alpha_grid[0], -16.0);
        assert_eq!(cfg.alpha_grid[8], 16.0);
        assert_eq!(cfg.alpha_grid[4], 0.0);
        assert_eq!(cfg.n_grid, vec![4096]);
    }

    #[test]
    fn json_overrides_and_fills() {
        let cfg = ExperimentConfig::from_json_str(
            r#"{"experiment":"margin","m":4,"d":8,"hidden":4,"embed":2,
                "n_grid":[64],"seeds":[7],
                "train":{"epochs":3,"learning_rates":[0.01],"batch_size":16,"validation_size":32}}"#,
        )
        .unwrap();
        assert_eq!(cfg.m, 4);
        assert_eq!(cfg.n_grid, vec![64]);
        assert_eq!(cfg.seeds, vec![7]);
        assert_eq!(cfg.train.epochs, 3);
        // Untouched fields fall back to defaults.
        assert_eq!(cfg.train.adam_beta1, 0.9);
        assert_eq!(cfg.variational.restarts, 8);
    }
}

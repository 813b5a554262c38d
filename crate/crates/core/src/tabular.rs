//! Exact triplet probability tables and the distributions they induce.
//!
//! A [`TabularTripletDistribution`] stores, for each context `x`, an `m x m`
//! matrix `T_x` with `T_x[i][j] = P(y+ = i, y- = j | x)`, plus the context
//! marginal `P_X`. Two derived objects carry the preference content:
//!
//! - the comparison distribution over `(x, {i, j})`, weighting unordered
//!   pairs by their total oriented mass `T_x[i][j] + T_x[j][i]`, and
//! - the conditional preference distribution (CPRD)
//!   `omega[i][j] = T_x[i][j] / (T_x[i][j] + T_x[j][i])` on supported pairs.
//!
//! Diagonal cells (`y+ = y-`) are representable but carry no preference
//! information: the CPRD masks them and the comparison distribution excludes
//! them from its normalizer.

use ndarray::{Array1, Array2};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::items::TripletDataset;

const SUM_TOL: f64 = 1e-9;

/// Joint distribution over `(x, y+, y-)` stored as a context marginal plus
/// per-context conditional tables.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularTripletDistribution {
    context_marginal: Array1<f64>,
    tables: Vec<Array2<f64>>,
}

impl TabularTripletDistribution {
    /// Validating constructor. Each table must be `m x m`, nonnegative, and
    /// sum to 1; contexts with zero marginal may have an all-zero table.
    pub fn new(context_marginal: Array1<f64>, tables: Vec<Array2<f64>>) -> Result<Self> {
        if context_marginal.len() != tables.len() || tables.is_empty() {
            return Err(Error::invalid("one table per context required"));
        }
        let m = tables[0].nrows();
        if context_marginal.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid("context marginal must be nonnegative"));
        }
        let total: f64 = context_marginal.sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::invalid(format!(
                "context marginal sums to {total}, expected 1"
            )));
        }
        for (x, t) in tables.iter().enumerate() {
            if t.nrows() != m || t.ncols() != m {
                return Err(Error::invalid("tables must share a square shape"));
            }
            if t.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::invalid("table entries must be nonnegative"));
            }
            let s: f64 = t.sum();
            let expected = if context_marginal[x] > 0.0 { 1.0 } else { 0.0 };
            if (s - expected).abs() > SUM_TOL && (s - 1.0).abs() > SUM_TOL {
                return Err(Error::invalid(format!(
                    "table {x} sums to {s}, expected {expected}"
                )));
            }
        }
        Ok(Self {
            context_marginal,
            tables,
        })
    }

    pub fn contexts(&self) -> usize {
        self.tables.len()
    }

    pub fn items(&self) -> usize {
        self.tables[0].nrows()
    }

    pub fn marginal(&self) -> &Array1<f64> {
        &self.context_marginal
    }

    pub fn table(&self, x: usize) -> &Array2<f64> {
        &self.tables[x]
    }

    /// Joint mass of the oriented triple `(x, i, j)`.
    pub fn joint(&self, x: usize, i: usize, j: usize) -> f64 {
        self.context_marginal[x] * self.tables[x][[i, j]]
    }

    /// Total joint mass on diagonal cells. Nonzero diagonals are legal but
    /// flagged: they contribute only a constant to the BT objective.
    pub fn diagonal_mass(&self) -> f64 {
        self.tables
            .iter()
            .zip(self.context_marginal.iter())
            .map(|(t, &px)| px * (0..t.nrows()).map(|i| t[[i, i]]).sum::<f64>())
            .sum()
    }

    pub fn has_diagonal_mass(&self) -> bool {
        self.diagonal_mass() > 0.0
    }

    /// Swap `T_x[i][j] <-> T_x[j][i]` in every context (orientation reversal).
    pub fn transposed(&self) -> Self {
        Self {
            context_marginal: self.context_marginal.clone(),
            tables: self.tables.iter().map(|t| t.t().to_owned()).collect(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let tables: Vec<Vec<f64>> = self
            .tables
            .iter()
            .map(|t| t.iter().copied().collect())
            .collect();
        serde_json::json!({
            "m": self.items(),
            "context_marginal": self.context_marginal.to_vec(),
            "tables": tables,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            m: usize,
            context_marginal: Vec<f64>,
            tables: Vec<Vec<f64>>,
        }
        let raw: Raw = serde_json::from_value(value.clone())?;
        let mut tables = Vec::with_capacity(raw.tables.len());
        for flat in raw.tables {
            let t = Array2::from_shape_vec((raw.m, raw.m), flat)
                .map_err(|e| Error::invalid(e.to_string()))?;
            tables.push(t);
        }
        Self::new(Array1::from_vec(raw.context_marginal), tables)
    }
}

/// Distribution over `(x, {i, j})` with `i < j`, proportional to the total
/// oriented mass of the pair. The normalizer `Z` equals the total
/// off-diagonal joint mass, context marginal included.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonDistribution {
    weights: Vec<Array2<f64>>,
    z: f64,
}

impl ComparisonDistribution {
    pub fn contexts(&self) -> usize {
        self.weights.len()
    }

    pub fn items(&self) -> usize {
        self.weights[0].nrows()
    }

    /// Normalized weight of the unordered pair `{i, j}` in context `x`.
    /// Symmetric in `(i, j)`; zero on the diagonal.
    pub fn weight(&self, x: usize, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.weights[x][[a, b]]
    }

    /// Normalizing constant: total off-diagonal joint mass of the source.
    pub fn z(&self) -> f64 {
        self.z
    }

    /// Iterate over `(x, i, j, weight)` for supported pairs with `i < j`.
    pub fn iter_pairs(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        self.weights.iter().enumerate().flat_map(|(x, w)| {
            let m = w.nrows();
            (0..m).flat_map(move |i| {
                (i + 1..m).filter_map(move |j| {
                    let v = w[[i, j]];
                    (v > 0.0).then_some((x, i, j, v))
                })
            })
        })
    }
}

/// Conditional preference distribution: per-context win probabilities on the
/// pairs the source distribution actually compares.
#[derive(Debug, Clone, PartialEq)]
pub struct Cprd {
    omega: Vec<Array2<f64>>,
    support: Vec<Array2<bool>>,
}

impl Cprd {
    pub fn contexts(&self) -> usize {
        self.omega.len()
    }

    pub fn items(&self) -> usize {
        self.omega[0].nrows()
    }

    pub fn omega(&self, x: usize, i: usize, j: usize) -> f64 {
        self.omega[x][[i, j]]
    }

    pub fn supported(&self, x: usize, i: usize, j: usize) -> bool {
        self.support[x][[i, j]]
    }

    /// Iterate over supported ordered entries `(x, i, j, omega)` with `i != j`.
    pub fn iter_supported(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        self.omega
            .iter()
            .zip(self.support.iter())
            .enumerate()
            .flat_map(|(x, (om, sup))| {
                let m = om.nrows();
                (0..m).flat_map(move |i| {
                    (0..m).filter_map(move |j| (sup[[i, j]]).then(|| (x, i, j, om[[i, j]])))
                })
            })
    }
}

/// Extract the CPRD of a table by the Bayes ratio
/// `omega[i][j] = T_x[i][j] / (T_x[i][j] + T_x[j][i])`.
///
/// Pairs with no mass in either orientation are masked out rather than
/// erroring; the diagonal is always unsupported.
pub fn cprd_from_distribution(dist: &TabularTripletDistribution) -> Cprd {
    let m = dist.items();
    let mut omega = Vec::with_capacity(dist.contexts());
    let mut support = Vec::with_capacity(dist.contexts());
    for x in 0..dist.contexts() {
        let t = dist.table(x);
        let mut om = Array2::zeros((m, m));
        let mut sup = Array2::from_elem((m, m), false);
        for i in 0..m {
            for j in (i + 1)..m {
                let mass = t[[i, j]] + t[[j, i]];
                if mass > 0.0 {
                    om[[i, j]] = t[[i, j]] / mass;
                    om[[j, i]] = t[[j, i]] / mass;
                    sup[[i, j]] = true;
                    sup[[j, i]] = true;
                }
            }
        }
        omega.push(om);
        support.push(sup);
    }
    Cprd { omega, support }
}

/// Build the comparison distribution of a table.
///
/// Errors with [`Error::DegenerateDistribution`] when every cell with mass
/// is diagonal.
pub fn comparison_distribution(dist: &TabularTripletDistribution) -> Result<ComparisonDistribution> {
    let m = dist.items();
    let mut weights = Vec::with_capacity(dist.contexts());
    let mut z = 0.0;
    for x in 0..dist.contexts() {
        let px = dist.marginal()[x];
        let t = dist.table(x);
        let mut w = Array2::zeros((m, m));
        for i in 0..m {
            for j in (i + 1)..m {
                let mass = px * (t[[i, j]] + t[[j, i]]);
                w[[i, j]] = mass;
                z += mass;
            }
        }
        weights.push(w);
    }
    if z <= 0.0 {
        return Err(Error::DegenerateDistribution);
    }
    for w in &mut weights {
        w.mapv_inplace(|v| v / z);
    }
    Ok(ComparisonDistribution { weights, z })
}

/// Exact empirical frequency table of a dataset over `m` items.
///
/// For the saturated tabular family this is also the maximum-likelihood
/// generative fit: `T_x[i][j] = count(x, i, j) / count(x)`.
pub fn empirical_distribution(
    data: &TripletDataset,
    m: usize,
) -> Result<TabularTripletDistribution> {
    data.validate_against(m)?;
    let n = data.len() as f64;
    let mut marginal = Array1::<f64>::zeros(m);
    let mut tables: Vec<Array2<f64>> = (0..m).map(|_| Array2::zeros((m, m))).collect();
    for t in &data.triplets {
        marginal[t.context_id] += 1.0;
        tables[t.context_id][[t.pos_id, t.neg_id]] += 1.0;
    }
    for (x, table) in tables.iter_mut().enumerate() {
        if marginal[x] > 0.0 {
            table.mapv_inplace(|c| c / marginal[x]);
        }
    }
    marginal.mapv_inplace(|c| c / n);
    TabularTripletDistribution::new(marginal, tables)
}

/// CPRD of the empirical counts: win-rate ratios with unseen pairs masked.
pub fn cprd_from_counts(data: &TripletDataset, m: usize) -> Result<Cprd> {
    Ok(cprd_from_distribution(&empirical_distribution(data, m)?))
}

/// Random normalized table over `m` items with `m` contexts (test support).
#[cfg(test)]
pub(crate) fn random_table(m: usize, seed: u64) -> TabularTripletDistribution {
    use rand::Rng;
    let mut rng = crate::rng::stream(seed, &[]);
    let mut marginal = Array1::zeros(m);
    for v in marginal.iter_mut() {
        *v = rng.random::<f64>() + 0.1;
    }
    let total = marginal.sum();
    marginal.mapv_inplace(|v| v / total);
    let mut tables = Vec::new();
    for _ in 0..m {
        let mut t = Array2::zeros((m, m));
        for v in t.iter_mut() {
            *v = rng.random::<f64>();
        }
        let s = t.sum();
        t.mapv_inplace(|v| v / s);
        tables.push(t);
    }
    TabularTripletDistribution::new(marginal, tables).unwrap()
}

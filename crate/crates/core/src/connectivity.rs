//! Connectivity degree of a triplet distribution.
//!
//! The connectivity degree is the infimum, over pairs `(f, g)` in a
//! hypothesis class, of
//!
//! ```text
//!   E_ComparisonDist[ (margin_f - margin_g)^2 ]
//!   --------------------------------------------
//!   E_{x ~ Qx} Var_{y ~ Qy(.|x)} [ (f - g)(x, y) ]
//! ```
//!
//! It controls how well pairwise information propagates into estimation
//! error under the test distribution `Q`. Two settings have closed forms:
//!
//! - tabular class, single context, uniform `Q`, mean-zero scores: the
//!   value is `m * lambda_2(L)`, the Fiedler value of the comparison-graph
//!   Laplacian scaled by the item count;
//! - linear class with per-context `Q`-centered features: the smallest
//!   eigenvalue of the whitened pair-difference covariance
//!   `Sigma_Q^{-1/2} Sigma_P Sigma_Q^{-1/2}`.
//!
//! For everything else [`variational_connectivity`] descends the log of the
//! ratio over `(f, g)` from multiple restarts and reports the minimum.
//! [`optimize_negative_for_connectivity`] closes the loop of the minimax
//! problem: it ascends per-context softmax logits of the negative
//! distribution through the differentiable comparison weights while the
//! inner pair keeps descending.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::items::ItemSet;
use crate::represent::{product_distribution, ConditionalPair};
use crate::rng;
use crate::scorers::{FeatureMap, ModelInputs, ModelSpec, ScoreModel, ScoreTable};
use crate::tabular::{comparison_distribution, ComparisonDistribution, TabularTripletDistribution};

/// Test distribution: a context marginal and per-context response
/// conditionals, used for accuracy and the paired variance.
#[derive(Debug, Clone, PartialEq)]
pub struct TestDistributionQ {
    context_marginal: Array1<f64>,
    response_conditional: Array2<f64>,
}

impl TestDistributionQ {
    pub fn new(context_marginal: Array1<f64>, response_conditional: Array2<f64>) -> Result<Self> {
        if response_conditional.nrows() != context_marginal.len() {
            return Err(Error::invalid("Q needs one response row per context"));
        }
        let close = |s: f64| (s - 1.0).abs() <= 1e-9;
        if context_marginal.iter().any(|&p| p < 0.0) || !close(context_marginal.sum()) {
            return Err(Error::invalid("Q context marginal is not a distribution"));
        }
        for row in response_conditional.rows() {
            if row.iter().any(|&p| p < 0.0) || !close(row.sum()) {
                return Err(Error::invalid("Q response row is not a distribution"));
            }
        }
        Ok(Self {
            context_marginal,
            response_conditional,
        })
    }

    /// Uniform over contexts and responses (the default of the experiments).
    pub fn uniform(contexts: usize, items: usize) -> Self {
        Self {
            context_marginal: Array1::from_elem(contexts, 1.0 / contexts as f64),
            response_conditional: Array2::from_elem((contexts, items), 1.0 / items as f64),
        }
    }

    pub fn contexts(&self) -> usize {
        self.context_marginal.len()
    }

    pub fn items(&self) -> usize {
        self.response_conditional.ncols()
    }

    pub fn context_prob(&self, x: usize) -> f64 {
        self.context_marginal[x]
    }

    pub fn response_prob(&self, x: usize, y: usize) -> f64 {
        self.response_conditional[[x, y]]
    }

    pub fn marginal(&self) -> &Array1<f64> {
        &self.context_marginal
    }
}

/// `E_{x ~ Qx} Var_{y ~ Qy(.|x)} [values[x, y]]`.
///
/// Zero exactly when the function is constant per context on Q's support.
pub fn paired_variance(values: &Array2<f64>, q: &TestDistributionQ) -> f64 {
    assert_eq!(values.dim(), (q.contexts(), q.items()), "value table shape");
    let mut total = 0.0;
    for x in 0..q.contexts() {
        let px = q.context_prob(x);
        if px == 0.0 {
            continue;
        }
        // Two-pass form: exact zero for per-context constants.
        let mut mean = 0.0;
        for y in 0..q.items() {
            mean += q.response_prob(x, y) * values[[x, y]];
        }
        let mut var = 0.0;
        for y in 0..q.items() {
            let d = values[[x, y]] - mean;
            var += q.response_prob(x, y) * d * d;
        }
        total += px * var;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnMethod {
    TabularSpectral,
    LinearSpectral,
    Variational,
}

/// A connectivity estimate with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnEstimate {
    pub value: f64,
    pub method: ConnMethod,
    pub restarts_used: usize,
    pub per_restart_values: Vec<f64>,
}

impl ConnEstimate {
    fn exact(value: f64, method: ConnMethod) -> Self {
        Self {
            value,
            method,
            restarts_used: 0,
            per_restart_values: Vec::new(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "method": self.method,
            "value": self.value,
            "restarts": self.restarts_used,
            "per_restart_values": self.per_restart_values,
        })
    }
}

/// Eigenvalues (ascending) and matching eigenvectors of a symmetric matrix.
fn symmetric_eigen(mat: &Array2<f64>) -> (Vec<f64>, Vec<Array1<f64>>) {
    let n = mat.nrows();
    let dm = DMatrix::from_row_slice(n, n, mat.as_slice().expect("contiguous"));
    let eig = dm.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = order
        .iter()
        .map(|&k| Array1::from_iter(eig.eigenvectors.column(k).iter().copied()))
        .collect();
    (values, vectors)
}

/// Weighted Laplacian of the comparison graph of a single-context table.
pub fn comparison_laplacian(cmp: &ComparisonDistribution) -> Array2<f64> {
    let m = cmp.items();
    let mut lap = Array2::zeros((m, m));
    for (_, i, j, w) in cmp.iter_pairs() {
        lap[[i, i]] += w;
        lap[[j, j]] += w;
        lap[[i, j]] -= w;
        lap[[j, i]] -= w;
    }
    lap
}

/// Exact connectivity of a single-context table for the mean-zero tabular
/// class under uniform `Q`: `m * lambda_2` of the comparison Laplacian.
///
/// Multi-context tables are not covered by the closed form and are routed
/// to [`variational_connectivity`] via [`Error::UnsupportedSetting`].
pub fn tabular_connectivity(dist: &TabularTripletDistribution) -> Result<ConnEstimate> {
    if dist.contexts() != 1 {
        return Err(Error::UnsupportedSetting {
            contexts: dist.contexts(),
        });
    }
    let m = dist.items();
    if m < 2 {
        return Err(Error::invalid("connectivity needs at least two items"));
    }
    let cmp = comparison_distribution(dist)?;
    let lap = comparison_laplacian(&cmp);
    let (eigs, _) = symmetric_eigen(&lap);
    let fiedler = eigs[1].max(0.0);
    Ok(ConnEstimate::exact(
        m as f64 * fiedler,
        ConnMethod::TabularSpectral,
    ))
}

/// Smallest eigenvalue of `Sigma_Q^{-1/2} Sigma_P Sigma_Q^{-1/2}` for
/// Q-centered features: the exact connectivity of the linear class.
pub fn linear_connectivity(
    dist: &TabularTripletDistribution,
    q: &TestDistributionQ,
    features: &FeatureMap,
) -> Result<ConnEstimate> {
    if features.contexts() != dist.contexts() || features.items() != dist.items() {
        return Err(Error::invalid("feature map shape does not match distribution"));
    }
    if q.contexts() != dist.contexts() || q.items() != dist.items() {
        return Err(Error::invalid("Q shape does not match distribution"));
    }
    // The closed form assumes per-context Q-centered features.
    for x in 0..features.contexts() {
        if q.context_prob(x) == 0.0 {
            continue;
        }
        for k in 0..features.dim() {
            let mean: f64 = (0..features.items())
                .map(|y| q.response_prob(x, y) * features.get(x, y)[k])
                .sum();
            if mean.abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "features are not Q-centered in context {x} (component {k} mean {mean:.3e}); \
                     apply FeatureMap::centered_under first"
                )));
            }
        }
    }

    let d = features.dim();
    let cmp = comparison_distribution(dist)?;
    let mut sigma_p = Array2::zeros((d, d));
    for (x, i, j, w) in cmp.iter_pairs() {
        let fi = features.get(x, i);
        let fj = features.get(x, j);
        for a in 0..d {
            let da = fi[a] - fj[a];
            for b in 0..d {
                sigma_p[[a, b]] += w * da * (fi[b] - fj[b]);
            }
        }
    }
    let mut sigma_q = Array2::zeros((d, d));
    for x in 0..features.contexts() {
        let px = q.context_prob(x);
        if px == 0.0 {
            continue;
        }
        for y in 0..features.items() {
            let p = px * q.response_prob(x, y);
            if p == 0.0 {
                continue;
            }
            let f = features.get(x, y);
            for a in 0..d {
                for b in 0..d {
                    sigma_q[[a, b]] += p * f[a] * f[b];
                }
            }
        }
    }
    let value = whitened_min_eigenvalue(&sigma_p, &sigma_q)?;
    Ok(ConnEstimate::exact(value, ConnMethod::LinearSpectral))
}

/// `lambda_min(Sigma_Q^{-1/2} Sigma_P Sigma_Q^{-1/2})`, erroring when
/// `Sigma_Q` is rank deficient.
pub(crate) fn whitened_min_eigenvalue(
    sigma_p: &Array2<f64>,
    sigma_q: &Array2<f64>,
) -> Result<f64> {
    let d = sigma_q.nrows();
    let (qvals, qvecs) = symmetric_eigen(sigma_q);
    let max = qvals.last().copied().unwrap_or(0.0).max(0.0);
    let floor = 1e-12 * max.max(1.0);
    if qvals[0] <= floor {
        return Err(Error::RankDeficient {
            eigenvalue: qvals[0],
            null_direction: qvecs[0].to_vec(),
        });
    }
    // W = U diag(1/sqrt(lambda)) U^T
    let mut white = Array2::zeros((d, d));
    for (lam, vec) in qvals.iter().zip(&qvecs) {
        let s = 1.0 / lam.sqrt();
        for a in 0..d {
            for b in 0..d {
                white[[a, b]] += s * vec[a] * vec[b];
            }
        }
    }
    let m = white.dot(sigma_p).dot(&white);
    let sym = (&m + &m.t()) * 0.5;
    let (vals, _) = symmetric_eigen(&sym);
    Ok(vals[0].max(0.0))
}

/// The raw connectivity ratio of a difference table `h = f - g`:
/// returns `(numerator, denominator)` of
/// `E_cmp[(h(x,i) - h(x,j))^2] / pairedVar_Q(h)`.
pub fn ratio_objective(
    cmp: &ComparisonDistribution,
    q: &TestDistributionQ,
    diff: &Array2<f64>,
) -> (f64, f64) {
    let mut num = 0.0;
    for (x, i, j, w) in cmp.iter_pairs() {
        let d = diff[[x, i]] - diff[[x, j]];
        num += w * d * d;
    }
    (num, paired_variance(diff, q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariationalConfig {
    pub restarts: usize,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
    pub denom_floor: f64,
}

impl Default for VariationalConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            steps: 2000,
            step_size: 1e-2,
            seed: 0,
            denom_floor: 1e-12,
        }
    }
}

/// The hypothesis class the variational estimator searches over.
#[derive(Clone, Copy)]
pub enum HypothesisClass<'a> {
    /// Mean-zero per-context score tables.
    Tabular,
    /// Linear scores over the given features.
    Linear { features: &'a FeatureMap },
    /// Cosine-similarity two-layer networks over the given items.
    CosineMlp {
        items: &'a ItemSet,
        hidden: usize,
        embed: usize,
    },
}

impl<'a> HypothesisClass<'a> {
    fn spec(&self, contexts: usize, items: usize) -> ModelSpec {
        match *self {
            HypothesisClass::Tabular => ModelSpec::Tabular { contexts, items },
            HypothesisClass::Linear { features } => ModelSpec::Linear {
                dim: features.dim(),
            },
            HypothesisClass::CosineMlp {
                items: set,
                hidden,
                embed,
            } => ModelSpec::CosineMlp {
                input: set.d(),
                hidden,
                embed,
            },
        }
    }

    fn inputs(&self) -> ModelInputs<'a> {
        match *self {
            HypothesisClass::Tabular => ModelInputs::none(),
            HypothesisClass::Linear { features } => ModelInputs::features(features),
            HypothesisClass::CosineMlp { items, .. } => ModelInputs::items(items),
        }
    }

    fn check_shapes(&self, contexts: usize, items: usize) -> Result<()> {
        match *self {
            HypothesisClass::Tabular => Ok(()),
            HypothesisClass::Linear { features } => {
                if features.contexts() != contexts || features.items() != items {
                    Err(Error::invalid("feature map shape mismatch"))
                } else {
                    Ok(())
                }
            }
            HypothesisClass::CosineMlp { items: set, .. } => {
                if set.m() != items || contexts != items {
                    Err(Error::invalid(
                        "cosine class needs contexts == items == item-set size",
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Random member; tabular and linear draw standard-normal parameters,
    /// the MLP uses its fan-in initialization.
    fn random_model(&self, contexts: usize, items: usize, seed: u64) -> ScoreModel {
        let spec = self.spec(contexts, items);
        let mut model = ScoreModel::init(spec, seed);
        match spec {
            ModelSpec::Tabular { .. } | ModelSpec::Linear { .. } => {
                let mut stream = rng::stream_tagged(seed, "var-init", &[]);
                for p in model.params_mut().iter_mut() {
                    *p = stream.sample::<f64, _>(StandardNormal);
                }
                model.project_tabular_mean_zero();
            }
            ModelSpec::CosineMlp { .. } => {}
        }
        model
    }
}

/// Variational estimate of the connectivity degree.
///
/// Each restart draws a fresh `(f, g)` pair and runs plain gradient descent
/// on `log(numerator / denominator)`; the reported value is the minimum
/// achieved ratio. Restarts whose denominator falls below
/// `cfg.denom_floor` (an effectively constant difference `f - g`) are
/// rejected and replaced from the derived seed stream; if every attempt is
/// rejected the class is degenerate for this `Q`.
pub fn variational_connectivity(
    dist: &TabularTripletDistribution,
    q: &TestDistributionQ,
    class: HypothesisClass<'_>,
    cfg: &VariationalConfig,
) -> Result<ConnEstimate> {
    if q.contexts() != dist.contexts() || q.items() != dist.items() {
        return Err(Error::invalid("Q shape does not match distribution"));
    }
    class.check_shapes(dist.contexts(), dist.items())?;
    let cmp = comparison_distribution(dist)?;
    variational_over(&cmp, q, class, cfg)
}

fn variational_over(
    cmp: &ComparisonDistribution,
    q: &TestDistributionQ,
    class: HypothesisClass<'_>,
    cfg: &VariationalConfig,
) -> Result<ConnEstimate> {
    let contexts = cmp.contexts();
    let items = cmp.items();
    let inputs = class.inputs();
    let mut values = Vec::with_capacity(cfg.restarts);
    let mut attempt = 0u64;
    let max_attempts = (cfg.restarts as u64) * 10;
    while values.len() < cfg.restarts && attempt < max_attempts {
        let seed_f = rng::derive_seed_tagged(cfg.seed, "var-f", &[attempt]);
        let seed_g = rng::derive_seed_tagged(cfg.seed, "var-g", &[attempt]);
        let mut f = class.random_model(contexts, items, seed_f);
        let mut g = class.random_model(contexts, items, seed_g);
        if let Some(v) = descend_ratio(cmp, q, inputs, &mut f, &mut g, cfg.steps, cfg) {
            values.push(v);
        }
        attempt += 1;
    }
    if values.is_empty() {
        return Err(Error::DegenerateClass {
            floor: cfg.denom_floor,
        });
    }
    let value = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ConnEstimate {
        value,
        method: ConnMethod::Variational,
        restarts_used: values.len(),
        per_restart_values: values,
    })
}

/// Gradient-descend `log(num/den)` over a pair in place; returns the final
/// ratio, or `None` when the denominator collapses below the floor.
fn descend_ratio(
    cmp: &ComparisonDistribution,
    q: &TestDistributionQ,
    inputs: ModelInputs<'_>,
    f: &mut ScoreModel,
    g: &mut ScoreModel,
    steps: usize,
    cfg: &VariationalConfig,
) -> Option<f64> {
    for _ in 0..steps {
        let tf = f.score_table(inputs);
        let tg = g.score_table(inputs);
        let diff = &tf - &tg;
        let (num, den) = ratio_objective(cmp, q, &diff);
        if den < cfg.denom_floor || !num.is_finite() || !den.is_finite() {
            return None;
        }
        let cot = log_ratio_table_gradient(cmp, q, &diff, num, den);
        let grad_f = f.score_table_vjp(inputs, &cot);
        let neg = cot.mapv(|v| -v);
        let grad_g = g.score_table_vjp(inputs, &neg);
        f.params_mut().scaled_add(-cfg.step_size, &grad_f);
        g.params_mut().scaled_add(-cfg.step_size, &grad_g);
    }
    let diff = &f.score_table(inputs) - &g.score_table(inputs);
    let (num, den) = ratio_objective(cmp, q, &diff);
    if den < cfg.denom_floor || !num.is_finite() {
        return None;
    }
    Some(num / den)
}

/// Gradient of `log(num) - log(den)` with respect to the difference table.
fn log_ratio_table_gradient(
    cmp: &ComparisonDistribution,
    q: &TestDistributionQ,
    diff: &Array2<f64>,
    num: f64,
    den: f64,
) -> Array2<f64> {
    let mut grad = Array2::zeros(diff.dim());
    // d num / d diff
    for (x, i, j, w) in cmp.iter_pairs() {
        let d = 2.0 * w * (diff[[x, i]] - diff[[x, j]]) / num;
        grad[[x, i]] += d;
        grad[[x, j]] -= d;
    }
    // d den / d diff: 2 Qx Qy (value - per-context mean)
    for x in 0..q.contexts() {
        let px = q.context_prob(x);
        if px == 0.0 {
            continue;
        }
        let mean: f64 = (0..q.items())
            .map(|y| q.response_prob(x, y) * diff[[x, y]])
            .sum();
        for y in 0..q.items() {
            let p = q.response_prob(x, y);
            if p > 0.0 {
                grad[[x, y]] -= 2.0 * px * p * (diff[[x, y]] - mean) / den;
            }
        }
    }
    grad
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdaConfig {
    pub outer: usize,
    pub inner: usize,
    pub ascent_step: f64,
    pub descent_step: f64,
    pub seed: u64,
    pub denom_floor: f64,
    /// Configuration for the final from-scratch re-estimation.
    pub estimate: VariationalConfig,
}

impl Default for GdaConfig {
    fn default() -> Self {
        Self {
            outer: 100,
            inner: 20,
            ascent_step: 5e-2,
            descent_step: 1e-2,
            seed: 0,
            denom_floor: 1e-12,
            estimate: VariationalConfig::default(),
        }
    }
}

/// Result of negative-distribution optimization.
#[derive(Debug, Clone)]
pub struct OptimizedNegative {
    /// Per-context negative distribution (softmax of the selected logits).
    pub p_minus: Array2<f64>,
    /// Fresh variational estimate of the selected distribution.
    pub achieved: ConnEstimate,
    /// Fresh variational estimate of the uniform-negative starting point,
    /// produced with the same machinery; `achieved.value` never falls
    /// below this.
    pub uniform_baseline: ConnEstimate,
}

/// Maximize the connectivity degree over the negative distribution of a
/// BT-consistent family for `target`.
///
/// The negative is parameterized by per-context softmax logits starting at
/// uniform; the BT-consistent positive is `softmax(logits + target)`. The
/// warm-started pair `(f, g)` first descends to the current infimum, then
/// each outer iteration runs `inner` descent steps followed by one ascent
/// step on the logits through the differentiable comparison weights.
///
/// The returned value is re-estimated from scratch: the uniform start, the
/// best iterate seen, and the final iterate are each estimated with fresh
/// restarts and the best one is returned, so the optimizer cannot report a
/// distribution worse than its own baseline.
pub fn optimize_negative_for_connectivity(
    target: &ScoreTable,
    q: &TestDistributionQ,
    class: HypothesisClass<'_>,
    cfg: &GdaConfig,
) -> Result<OptimizedNegative> {
    let (contexts, items) = target.dim();
    if q.contexts() != contexts || q.items() != items {
        return Err(Error::invalid("Q shape does not match target table"));
    }
    class.check_shapes(contexts, items)?;
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("target scores must be finite"));
    }

    let inputs = class.inputs();
    let mut logits = Array2::<f64>::zeros((contexts, items));
    let seed_f = rng::derive_seed_tagged(cfg.seed, "gda-f", &[]);
    let seed_g = rng::derive_seed_tagged(cfg.seed, "gda-g", &[]);
    let mut f = class.random_model(contexts, items, seed_f);
    let mut g = class.random_model(contexts, items, seed_g);
    let inner_cfg = VariationalConfig {
        step_size: cfg.descent_step,
        denom_floor: cfg.denom_floor,
        ..VariationalConfig::default()
    };
    let mut reseeds = 0u64;
    let mut best_logits = logits.clone();
    let mut best_proxy = f64::NEG_INFINITY;

    for outer in 0..cfg.outer {
        let cmp = comparison_from_logits(&logits, target, q.marginal());
        // The first inner phase runs to convergence so ascent directions
        // start from a meaningful inner minimizer.
        let inner_steps = if outer == 0 {
            cfg.estimate.steps
        } else {
            cfg.inner
        };
        // Inner minimization, re-randomizing the pair if it collapses.
        let Some(proxy) = descend_ratio(&cmp, q, inputs, &mut f, &mut g, inner_steps, &inner_cfg)
        else {
            reseeds += 1;
            f = class.random_model(
                contexts,
                items,
                rng::derive_seed_tagged(cfg.seed, "gda-f", &[reseeds]),
            );
            g = class.random_model(
                contexts,
                items,
                rng::derive_seed_tagged(cfg.seed, "gda-g", &[reseeds]),
            );
            continue;
        };
        if proxy > best_proxy {
            best_proxy = proxy;
            best_logits = logits.clone();
        }
        // One ascent step on the logits with (f, g) fixed.
        let diff = &f.score_table(inputs) - &g.score_table(inputs);
        let den = paired_variance(&diff, q);
        if den < cfg.denom_floor {
            continue;
        }
        let ascent = log_ratio_logit_gradient(&logits, target, q.marginal(), &diff);
        let proposal = &logits + &(ascent * cfg.ascent_step);
        if proposal.iter().all(|v| v.is_finite()) {
            logits = proposal;
        } else {
            break; // keep the last feasible iterate
        }
    }

    // Candidate selection by fresh re-estimation.
    let uniform_logits = Array2::<f64>::zeros((contexts, items));
    let mut candidates: Vec<Array2<f64>> = vec![uniform_logits];
    for cand in [best_logits, logits] {
        if !candidates.iter().any(|c| c == &cand) {
            candidates.push(cand);
        }
    }
    let mut estimates = Vec::with_capacity(candidates.len());
    for (k, cand) in candidates.iter().enumerate() {
        let p_minus = softmax_rows(cand);
        let p_plus = softmax_rows(&(cand + target));
        let pair = ConditionalPair::new(q.marginal().clone(), p_plus, p_minus.clone())?;
        let dist = product_distribution(&pair);
        let est_cfg = VariationalConfig {
            seed: rng::derive_seed_tagged(cfg.estimate.seed, "gda-candidate", &[k as u64]),
            ..cfg.estimate
        };
        let est = variational_connectivity(&dist, q, class, &est_cfg)?;
        estimates.push((p_minus, est));
    }
    let uniform_baseline = estimates[0].1.clone();
    let (p_minus, achieved) = estimates
        .into_iter()
        .max_by(|a, b| a.1.value.total_cmp(&b.1.value))
        .expect("at least the uniform candidate exists");
    Ok(OptimizedNegative {
        p_minus,
        achieved,
        uniform_baseline,
    })
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(logits.dim());
    for (mut orow, lrow) in out.rows_mut().into_iter().zip(logits.rows()) {
        let max = lrow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (o, &l) in orow.iter_mut().zip(lrow) {
            *o = (l - max).exp();
            z += *o;
        }
        for o in orow.iter_mut() {
            *o /= z;
        }
    }
    out
}

/// Comparison distribution of the BT-consistent product family at the
/// given negative logits.
fn comparison_from_logits(
    logits: &Array2<f64>,
    target: &ScoreTable,
    context_marginal: &Array1<f64>,
) -> ComparisonDistribution {
    let p_minus = softmax_rows(logits);
    let p_plus = softmax_rows(&(logits + target));
    let pair = ConditionalPair::new(context_marginal.clone(), p_plus, p_minus)
        .expect("softmax factors are valid distributions");
    comparison_distribution(&product_distribution(&pair))
        .expect("softmax factors have off-diagonal mass")
}

/// Gradient of `log(ratio)` with respect to the negative logits, holding
/// the pair difference fixed. Only the numerator depends on the logits:
/// `N = sum_x A_x / Z`, `Z = sum_x S_x`, with per-context
/// `A = Px * v^T C u` and `S = Px * sum_{i != j} v_i u_j`, where
/// `u = softmax(logits)`, `v = softmax(logits + target)` and
/// `C[i][j] = (diff[x,i] - diff[x,j])^2`.
fn log_ratio_logit_gradient(
    logits: &Array2<f64>,
    target: &ScoreTable,
    context_marginal: &Array1<f64>,
    diff: &Array2<f64>,
) -> Array2<f64> {
    let (contexts, items) = logits.dim();
    let u_all = softmax_rows(logits);
    let v_all = softmax_rows(&(logits + target));

    // Per-context unnormalized sums.
    let mut a = vec![0.0; contexts];
    let mut s = vec![0.0; contexts];
    for x in 0..contexts {
        let px = context_marginal[x];
        for i in 0..items {
            for j in 0..items {
                if i == j {
                    continue;
                }
                let c = {
                    let d = diff[[x, i]] - diff[[x, j]];
                    d * d
                };
                a[x] += px * v_all[[x, i]] * u_all[[x, j]] * c;
                s[x] += px * v_all[[x, i]] * u_all[[x, j]];
            }
        }
    }
    let z: f64 = s.iter().sum();
    let a_total: f64 = a.iter().sum();
    let n = a_total / z;

    let mut grad = Array2::zeros((contexts, items));
    for x in 0..contexts {
        let px = context_marginal[x];
        if px == 0.0 {
            continue;
        }
        let u = u_all.row(x);
        let v = v_all.row(x);
        // Raw derivatives of A and S with respect to u and v entries.
        let mut da_du = vec![0.0; items];
        let mut da_dv = vec![0.0; items];
        let mut ds_du = vec![0.0; items];
        let mut ds_dv = vec![0.0; items];
        for k in 0..items {
            for i in 0..items {
                if i == k {
                    continue;
                }
                let d = diff[[x, i]] - diff[[x, k]];
                let c = d * d;
                da_du[k] += px * v[i] * c;
                da_dv[k] += px * u[i] * c;
                ds_du[k] += px * v[i];
                ds_dv[k] += px * u[i];
            }
        }
        // dN/d(param) = (Z * dA - A_total * dS) / Z^2, then chain through
        // both softmaxes: J^T t = p .* (t - <p, t>).
        let dn_du: Vec<f64> = (0..items)
            .map(|k| (z * da_du[k] - a_total * ds_du[k]) / (z * z))
            .collect();
        let dn_dv: Vec<f64> = (0..items)
            .map(|k| (z * da_dv[k] - a_total * ds_dv[k]) / (z * z))
            .collect();
        let inner_u: f64 = (0..items).map(|k| u[k] * dn_du[k]).sum();
        let inner_v: f64 = (0..items).map(|k| v[k] * dn_dv[k]).sum();
        for k in 0..items {
            let via_u = u[k] * (dn_du[k] - inner_u);
            let via_v = v[k] * (dn_dv[k] - inner_v);
            grad[[x, k]] = (via_u + via_v) / n;
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single_context_pairs(m: usize, edges: &[(usize, usize, f64)]) -> TabularTripletDistribution {
        // Split each unordered weight evenly across orientations.
        let mut t = Array2::zeros((m, m));
        let total: f64 = edges.iter().map(|e| e.2).sum();
        for &(i, j, w) in edges {
            t[[i, j]] += 0.5 * w / total;
            t[[j, i]] += 0.5 * w / total;
        }
        TabularTripletDistribution::new(array![1.0], vec![t]).unwrap()
    }

    #[test]
    fn paired_variance_of_constant_is_zero() {
        let q = TestDistributionQ::uniform(2, 3);
        let values = Array2::from_elem((2, 3), 4.2);
        assert!(paired_variance(&values, &q) < 1e-24);
    }

    #[test]
    fn paired_variance_two_point() {
        let q = TestDistributionQ::uniform(1, 2);
        let values = array![[1.0, -1.0]];
        assert!((paired_variance(&values, &q) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn paired_variance_matches_brute_force() {
        let q = TestDistributionQ::new(
            array![0.3, 0.7],
            array![[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]],
        )
        .unwrap();
        let values = array![[0.3, -1.2, 0.8], [2.0, 0.0, -0.5]];
        let mut expected = 0.0;
        for x in 0..2 {
            let mut var = 0.0;
            // Var = 0.5 * E_{y,y'}[(v(y) - v(y'))^2]
            for y in 0..3 {
                for yp in 0..3 {
                    let d = values[[x, y]] - values[[x, yp]];
                    var += 0.5 * q.response_prob(x, y) * q.response_prob(x, yp) * d * d;
                }
            }
            expected += q.context_prob(x) * var;
        }
        assert!((paired_variance(&values, &q) - expected).abs() < 1e-12);
    }

    #[test]
    fn complete_uniform_graph_m4() {
        let edges: Vec<(usize, usize, f64)> = (0..4)
            .flat_map(|i| ((i + 1)..4).map(move |j| (i, j, 1.0)))
            .collect();
        let dist = single_context_pairs(4, &edges);
        let est = tabular_connectivity(&dist).unwrap();
        assert!((est.value - 8.0 / 3.0).abs() < 1e-9, "value {}", est.value);
        assert_eq!(est.method, ConnMethod::TabularSpectral);
    }

    #[test]
    fn path_graph_m3() {
        let dist = single_context_pairs(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        let est = tabular_connectivity(&dist).unwrap();
        assert!((est.value - 1.5).abs() < 1e-9, "value {}", est.value);
    }

    #[test]
    fn disconnected_graph_has_zero_connectivity() {
        let dist = single_context_pairs(4, &[(0, 1, 1.0), (2, 3, 1.0)]);
        let est = tabular_connectivity(&dist).unwrap();
        assert!(est.value.abs() < 1e-9, "value {}", est.value);
    }

    #[test]
    fn laplacian_annihilates_the_ones_vector() {
        let dist = single_context_pairs(5, &[(0, 1, 2.0), (1, 2, 1.0), (2, 3, 3.0), (3, 4, 0.5)]);
        let cmp = comparison_distribution(&dist).unwrap();
        let lap = comparison_laplacian(&cmp);
        let ones = Array1::from_elem(5, 1.0);
        let image = lap.dot(&ones);
        assert!(image.iter().all(|v| v.abs() < 1e-10));
        let (eigs, _) = symmetric_eigen(&lap);
        assert!(eigs[0].abs() < 1e-10);
    }

    #[test]
    fn tabular_connectivity_invariant_to_mass_rescaling() {
        // Same weight pattern with different total oriented mass (the rest
        // moved to the diagonal) gives the same normalized comparison graph.
        let mut t1 = Array2::zeros((3, 3));
        t1[[0, 1]] = 0.25;
        t1[[1, 0]] = 0.25;
        t1[[1, 2]] = 0.5;
        let mut t2 = Array2::zeros((3, 3));
        t2[[0, 1]] = 0.05;
        t2[[1, 0]] = 0.05;
        t2[[1, 2]] = 0.1;
        t2[[0, 0]] = 0.8;
        let d1 = TabularTripletDistribution::new(array![1.0], vec![t1]).unwrap();
        let d2 = TabularTripletDistribution::new(array![1.0], vec![t2]).unwrap();
        let a = tabular_connectivity(&d1).unwrap().value;
        let b = tabular_connectivity(&d2).unwrap().value;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn multi_context_spectral_is_rejected() {
        let dist = crate::tabular::random_table(3, 77);
        assert!(matches!(
            tabular_connectivity(&dist),
            Err(Error::UnsupportedSetting { contexts: 3 })
        ));
    }

    #[test]
    fn whitened_diagonal_case() {
        let sigma_p = array![[2.0, 0.0], [0.0, 0.5]];
        let sigma_q = array![[1.0, 0.0], [0.0, 1.0]];
        let v = whitened_min_eigenvalue(&sigma_p, &sigma_q).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn whitened_rank_deficiency_reports_null_direction() {
        let sigma_p = array![[1.0, 0.0], [0.0, 1.0]];
        let sigma_q = array![[1.0, 0.0], [0.0, 0.0]];
        match whitened_min_eigenvalue(&sigma_p, &sigma_q) {
            Err(Error::RankDeficient { null_direction, .. }) => {
                assert!((null_direction[1].abs() - 1.0).abs() < 1e-9);
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn linear_connectivity_is_scale_invariant() {
        let dist = single_context_pairs(3, &[(0, 1, 1.0), (1, 2, 2.0), (0, 2, 0.5)]);
        let q = TestDistributionQ::uniform(1, 3);
        let raw = FeatureMap::new(vec![array![[1.0, 0.2], [-0.3, 1.1], [0.4, -0.9]]]).unwrap();
        let feats = raw.centered_under(&q).unwrap();
        let scaled = FeatureMap::new(vec![array![
            [3.0 * 1.0, 3.0 * 0.2],
            [3.0 * -0.3, 3.0 * 1.1],
            [3.0 * 0.4, 3.0 * -0.9]
        ]])
        .unwrap()
        .centered_under(&q)
        .unwrap();
        let a = linear_connectivity(&dist, &q, &feats).unwrap().value;
        let b = linear_connectivity(&dist, &q, &scaled).unwrap().value;
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn uncentered_features_are_rejected() {
        let dist = single_context_pairs(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        let q = TestDistributionQ::uniform(1, 3);
        let feats = FeatureMap::one_hot(1, 3);
        assert!(linear_connectivity(&dist, &q, &feats).is_err());
    }

    #[test]
    fn ratio_objective_is_shift_and_scale_invariant() {
        let dist = single_context_pairs(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (0, 3, 1.0)]);
        let cmp = comparison_distribution(&dist).unwrap();
        let q = TestDistributionQ::uniform(1, 4);
        let diff = array![[0.4, -1.0, 0.3, 2.0]];
        let (n0, d0) = ratio_objective(&cmp, &q, &diff);
        let shifted = diff.mapv(|v| v + 5.5);
        let (n1, d1) = ratio_objective(&cmp, &q, &shifted);
        assert!((n0 / d0 - n1 / d1).abs() < 1e-9);
        let scaled = diff.mapv(|v| v * -3.0);
        let (n2, d2) = ratio_objective(&cmp, &q, &scaled);
        assert!((n0 / d0 - n2 / d2).abs() < 1e-9);
    }

    #[test]
    fn degenerate_class_is_reported() {
        // Q concentrated on one response makes every difference function
        // constant on Q's support, so the denominator is always zero.
        let dist = single_context_pairs(2, &[(0, 1, 1.0)]);
        let q = TestDistributionQ::new(array![1.0], array![[1.0, 0.0]]).unwrap();
        let cfg = VariationalConfig {
            restarts: 2,
            steps: 5,
            ..VariationalConfig::default()
        };
        let err = variational_connectivity(&dist, &q, HypothesisClass::Tabular, &cfg).unwrap_err();
        assert!(matches!(err, Error::DegenerateClass { .. }));
    }

    #[test]
    fn identical_pair_restart_is_rejected() {
        let dist = single_context_pairs(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        let cmp = comparison_distribution(&dist).unwrap();
        let q = TestDistributionQ::uniform(1, 3);
        let cfg = VariationalConfig::default();
        let mut f = HypothesisClass::Tabular.random_model(1, 3, 123);
        let mut g = f.clone();
        let out = descend_ratio(&cmp, &q, ModelInputs::none(), &mut f, &mut g, 3, &cfg);
        assert!(out.is_none());
    }

    #[test]
    fn variational_tabular_tracks_spectral_on_a_path() {
        let dist = single_context_pairs(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]);
        let q = TestDistributionQ::uniform(1, 4);
        let exact = tabular_connectivity(&dist).unwrap().value;
        let cfg = VariationalConfig {
            restarts: 4,
            seed: 5,
            ..VariationalConfig::default()
        };
        let est = variational_connectivity(&dist, &q, HypothesisClass::Tabular, &cfg).unwrap();
        assert!(
            est.value >= exact - 1e-9,
            "variational {} below exact {}",
            est.value,
            exact
        );
        assert!(
            est.value <= 1.05 * exact,
            "variational {} too far above exact {}",
            est.value,
            exact
        );
        assert_eq!(est.restarts_used, 4);
        for &v in &est.per_restart_values {
            assert!(v >= exact - 1e-9);
        }
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let target = array![[0.8, -0.2, 0.1], [0.0, 0.5, -0.5]];
        let marginal = array![0.5, 0.5];
        let diff = array![[0.3, -0.6, 0.2], [1.0, -0.2, 0.0]];
        let logits = array![[0.1, -0.3, 0.2], [0.0, 0.4, -0.1]];

        let numerator = |l: &Array2<f64>| -> f64 {
            let cmp = comparison_from_logits(l, &target, &marginal);
            let q = TestDistributionQ::uniform(2, 3);
            let (num, _) = ratio_objective(&cmp, &q, &diff);
            num
        };

        let grad = log_ratio_logit_gradient(&logits, &target, &marginal, &diff);
        let n0 = numerator(&logits);
        let h = 1e-6;
        for x in 0..2 {
            for k in 0..3 {
                let mut lp = logits.clone();
                lp[[x, k]] += h;
                let mut lm = logits.clone();
                lm[[x, k]] -= h;
                let fd = (numerator(&lp).ln() - numerator(&lm).ln()) / (2.0 * h);
                assert!(
                    (grad[[x, k]] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                    "logit grad mismatch at ({x},{k}): {} vs {}",
                    grad[[x, k]],
                    fd
                );
            }
        }
        assert!(n0 > 0.0);
    }
}

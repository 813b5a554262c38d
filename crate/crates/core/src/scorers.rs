//! Score-function hypothesis classes with exact parameter gradients.
//!
//! Three kinds share one flat-parameter representation so a single optimizer
//! drives them all:
//!
//! - `tabular`: one free score per (context, item) cell, kept mean-zero per
//!   context for identifiability;
//! - `linear`: `r(x, y) = w . phi(x, y)` over a supplied feature map;
//! - `cosine_mlp`: cosine similarity of two embeddings produced by a shared
//!   two-layer ReLU network `d -> h -> e`, so scores live in `[-1, 1]`.
//!
//! Gradients are hand-written reverse mode. The batched entry points
//! ([`ScoreModel::score_table`] and [`ScoreModel::score_table_vjp`]) evaluate
//! the full `contexts x items` score table and pull a table cotangent back to
//! parameter space in one pass; per-triplet margin gradients are a sparse
//! special case.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::items::ItemSet;
use crate::rng;

/// Guard for cosine similarity when an embedding collapses to zero.
pub const COSINE_EPS: f64 = 1e-12;

/// A precomputed score table: `table[[x, y]] = r(x, y)`.
pub type ScoreTable = Array2<f64>;

/// Shape metadata for the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSpec {
    /// One parameter per (context, item) cell.
    Tabular { contexts: usize, items: usize },
    /// A weight vector over `dim` features.
    Linear { dim: usize },
    /// Two-layer ReLU embedding network `input -> hidden -> embed`,
    /// scored by cosine similarity.
    CosineMlp {
        input: usize,
        hidden: usize,
        embed: usize,
    },
}

impl ModelSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            ModelSpec::Tabular { contexts, items } => contexts * items,
            ModelSpec::Linear { dim } => dim,
            ModelSpec::CosineMlp {
                input,
                hidden,
                embed,
            } => input * hidden + hidden + hidden * embed + embed,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelSpec::Tabular { .. } => "tabular",
            ModelSpec::Linear { .. } => "linear",
            ModelSpec::CosineMlp { .. } => "cosine_mlp",
        }
    }
}

/// Per-(context, item) feature vectors for the linear class.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    dim: usize,
    feats: Vec<Array2<f64>>, // per context: items x dim
}

impl FeatureMap {
    pub fn new(feats: Vec<Array2<f64>>) -> Result<Self> {
        if feats.is_empty() {
            return Err(Error::invalid("feature map needs at least one context"));
        }
        let dim = feats[0].ncols();
        let items = feats[0].nrows();
        if feats.iter().any(|f| f.ncols() != dim || f.nrows() != items) {
            return Err(Error::invalid("feature blocks must share a shape"));
        }
        Ok(Self { dim, feats })
    }

    /// One-hot item features, shared across contexts: `phi(x, y) = e_y`.
    pub fn one_hot(contexts: usize, items: usize) -> Self {
        let block = Array2::from_shape_fn((items, items), |(i, j)| f64::from(i == j));
        Self {
            dim: items,
            feats: vec![block; contexts],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contexts(&self) -> usize {
        self.feats.len()
    }

    pub fn items(&self) -> usize {
        self.feats[0].nrows()
    }

    pub fn get(&self, x: usize, y: usize) -> ndarray::ArrayView1<'_, f64> {
        self.feats[x].row(y)
    }

    /// Subtract the per-context mean `E_{y ~ Qy(.|x)}[phi(x, y)]`, the
    /// preprocessing required by the exact linear connectivity formula.
    pub fn centered_under(&self, q: &crate::connectivity::TestDistributionQ) -> Result<Self> {
        if q.contexts() != self.contexts() || q.items() != self.items() {
            return Err(Error::invalid("Q shape does not match feature map"));
        }
        let mut feats = Vec::with_capacity(self.feats.len());
        for (x, block) in self.feats.iter().enumerate() {
            let mut mean = Array1::<f64>::zeros(self.dim);
            for y in 0..self.items() {
                mean.scaled_add(q.response_prob(x, y), &block.row(y));
            }
            let mut centered = block.clone();
            for mut row in centered.rows_mut() {
                row -= &mean;
            }
            feats.push(centered);
        }
        FeatureMap::new(feats)
    }
}

/// Evaluation context handed to a model: items for the MLP kind, features
/// for the linear kind. The tabular kind needs neither.
#[derive(Clone, Copy)]
pub struct ModelInputs<'a> {
    pub items: Option<&'a ItemSet>,
    pub features: Option<&'a FeatureMap>,
}

impl<'a> ModelInputs<'a> {
    pub fn none() -> Self {
        Self {
            items: None,
            features: None,
        }
    }

    pub fn items(items: &'a ItemSet) -> Self {
        Self {
            items: Some(items),
            features: None,
        }
    }

    pub fn features(features: &'a FeatureMap) -> Self {
        Self {
            items: None,
            features: Some(features),
        }
    }
}

/// A parameterized score function with a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    spec: ModelSpec,
    seed: u64,
    params: Array1<f64>,
}

impl ScoreModel {
    /// Deterministic initialization. Tabular and linear start at zero; MLP
    /// weights are drawn `N(0, 1/fan_in)` with zero biases.
    pub fn init(spec: ModelSpec, seed: u64) -> Self {
        let mut params = Array1::zeros(spec.param_count());
        if let ModelSpec::CosineMlp {
            input,
            hidden,
            embed,
        } = spec
        {
            let mut stream = rng::stream_tagged(seed, "model-init", &[]);
            let w1_std = 1.0 / (input as f64).sqrt();
            let w2_std = 1.0 / (hidden as f64).sqrt();
            let (w1, _b1, w2, _b2) = mlp_offsets(input, hidden, embed);
            for k in 0..hidden * input {
                params[w1 + k] = w1_std * stream.sample::<f64, _>(StandardNormal);
            }
            for k in 0..embed * hidden {
                params[w2 + k] = w2_std * stream.sample::<f64, _>(StandardNormal);
            }
        }
        Self { spec, seed, params }
    }

    pub fn from_params(spec: ModelSpec, seed: u64, params: Array1<f64>) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                spec.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(Self { spec, seed, params })
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &Array1<f64> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Array1<f64> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Evaluate `r(x, y)`.
    pub fn score(&self, inputs: ModelInputs<'_>, x: usize, y: usize) -> f64 {
        match self.spec {
            ModelSpec::Tabular { items, .. } => self.params[x * items + y],
            ModelSpec::Linear { .. } => {
                let feats = inputs.features.expect("linear model needs features");
                self.params.dot(&feats.get(x, y))
            }
            ModelSpec::CosineMlp { .. } => {
                let items = inputs.items.expect("cosine MLP needs an item set");
                let u = self.embed(items.row(x).as_slice().unwrap()).1;
                let v = self.embed(items.row(y).as_slice().unwrap()).1;
                cosine(&u, &v)
            }
        }
    }

    /// The pairwise margin `r(x, y) - r(x, y')` for `y != y'`.
    pub fn pairwise_margin(&self, inputs: ModelInputs<'_>, x: usize, y: usize, yp: usize) -> f64 {
        assert_ne!(y, yp, "margin needs distinct responses");
        self.score(inputs, x, y) - self.score(inputs, x, yp)
    }

    /// Evaluate the whole score table. Table shape is `(contexts, items)`
    /// as dictated by the model kind (for MLP and one-hot universes the two
    /// coincide with the item count).
    pub fn score_table(&self, inputs: ModelInputs<'_>) -> ScoreTable {
        match self.spec {
            ModelSpec::Tabular { contexts, items } => self
                .params
                .view()
                .to_shape((contexts, items))
                .expect("tabular shape")
                .to_owned(),
            ModelSpec::Linear { .. } => {
                let feats = inputs.features.expect("linear model needs features");
                let mut table = Array2::zeros((feats.contexts(), feats.items()));
                for x in 0..feats.contexts() {
                    for y in 0..feats.items() {
                        table[[x, y]] = self.params.dot(&feats.get(x, y));
                    }
                }
                table
            }
            ModelSpec::CosineMlp { embed, .. } => {
                let items = inputs.items.expect("cosine MLP needs an item set");
                let m = items.m();
                let mut embeds = Array2::zeros((m, embed));
                for i in 0..m {
                    let (_, e) = self.embed(items.row(i).as_slice().unwrap());
                    embeds.row_mut(i).assign(&Array1::from_vec(e));
                }
                let mut table = Array2::zeros((m, m));
                for x in 0..m {
                    for y in 0..m {
                        table[[x, y]] = cosine(
                            embeds.row(x).as_slice().unwrap(),
                            embeds.row(y).as_slice().unwrap(),
                        );
                    }
                }
                table
            }
        }
    }

    /// Pull a score-table cotangent back to parameter space:
    /// returns `sum_{x,y} cot[x,y] * d r(x,y) / d params`.
    pub fn score_table_vjp(&self, inputs: ModelInputs<'_>, cot: &Array2<f64>) -> Array1<f64> {
        let mut grad = Array1::zeros(self.param_count());
        match self.spec {
            ModelSpec::Tabular { contexts, items } => {
                assert_eq!(cot.dim(), (contexts, items));
                for x in 0..contexts {
                    for y in 0..items {
                        grad[x * items + y] = cot[[x, y]];
                    }
                }
            }
            ModelSpec::Linear { .. } => {
                let feats = inputs.features.expect("linear model needs features");
                assert_eq!(cot.dim(), (feats.contexts(), feats.items()));
                for x in 0..feats.contexts() {
                    for y in 0..feats.items() {
                        let c = cot[[x, y]];
                        if c != 0.0 {
                            grad.scaled_add(c, &feats.get(x, y));
                        }
                    }
                }
            }
            ModelSpec::CosineMlp {
                input,
                hidden,
                embed,
            } => {
                let items = inputs.items.expect("cosine MLP needs an item set");
                let m = items.m();
                assert_eq!(cot.dim(), (m, m));
                // Forward every item once, caching pre-activations.
                let mut pre = vec![vec![0.0; hidden]; m];
                let mut emb = vec![vec![0.0; embed]; m];
                for i in 0..m {
                    let (p, e) = self.embed(items.row(i).as_slice().unwrap());
                    pre[i] = p;
                    emb[i] = e;
                }
                // Accumulate embedding cotangents across all table cells.
                let mut ecot = vec![vec![0.0; embed]; m];
                for x in 0..m {
                    for y in 0..m {
                        let c = cot[[x, y]];
                        if c == 0.0 {
                            continue;
                        }
                        let (du, dv) = cosine_grads(&emb[x], &emb[y]);
                        for k in 0..embed {
                            ecot[x][k] += c * du[k];
                            ecot[y][k] += c * dv[k];
                        }
                    }
                }
                // One backward pass per item.
                let gslice = grad.as_slice_mut().unwrap();
                for i in 0..m {
                    self.backward_embed(
                        items.row(i).as_slice().unwrap(),
                        &pre[i],
                        &ecot[i],
                        gslice,
                        input,
                        hidden,
                        embed,
                    );
                }
            }
        }
        grad
    }

    /// Exact gradient of the margin `r(x, y+) - r(x, y-)` with respect to
    /// the flat parameter vector.
    pub fn score_gradient(
        &self,
        inputs: ModelInputs<'_>,
        x: usize,
        y_pos: usize,
        y_neg: usize,
    ) -> Array1<f64> {
        assert_ne!(y_pos, y_neg, "margin gradient needs distinct responses");
        match self.spec {
            ModelSpec::Tabular { items, .. } => {
                let mut grad = Array1::zeros(self.param_count());
                grad[x * items + y_pos] += 1.0;
                grad[x * items + y_neg] -= 1.0;
                grad
            }
            ModelSpec::Linear { .. } => {
                let feats = inputs.features.expect("linear model needs features");
                let mut grad = feats.get(x, y_pos).to_owned();
                grad -= &feats.get(x, y_neg);
                grad
            }
            ModelSpec::CosineMlp {
                input,
                hidden,
                embed,
            } => {
                let items = inputs.items.expect("cosine MLP needs an item set");
                // Distinct item ids with their embedding cotangents; x may
                // coincide with y_pos or y_neg.
                let mut ids = vec![x, y_pos, y_neg];
                ids.sort_unstable();
                ids.dedup();
                let fwd: Vec<(Vec<f64>, Vec<f64>)> = ids
                    .iter()
                    .map(|&i| self.embed(items.row(i).as_slice().unwrap()))
                    .collect();
                let pos_of = |i: usize| ids.iter().position(|&v| v == i).unwrap();
                let (ux, up, un) = (pos_of(x), pos_of(y_pos), pos_of(y_neg));
                let mut ecot = vec![vec![0.0; embed]; ids.len()];
                let (du, dv) = cosine_grads(&fwd[ux].1, &fwd[up].1);
                add_scaled(&mut ecot[ux], &du, 1.0);
                add_scaled(&mut ecot[up], &dv, 1.0);
                let (du, dv) = cosine_grads(&fwd[ux].1, &fwd[un].1);
                add_scaled(&mut ecot[ux], &du, -1.0);
                add_scaled(&mut ecot[un], &dv, -1.0);
                let mut grad = Array1::zeros(self.param_count());
                let gslice = grad.as_slice_mut().unwrap();
                for (k, &i) in ids.iter().enumerate() {
                    self.backward_embed(
                        items.row(i).as_slice().unwrap(),
                        &fwd[k].0,
                        &ecot[k],
                        gslice,
                        input,
                        hidden,
                        embed,
                    );
                }
                grad
            }
        }
    }

    /// Re-center tabular parameters to zero mean per context. A no-op for
    /// the other kinds. Margins are unchanged.
    pub fn project_tabular_mean_zero(&mut self) {
        if let ModelSpec::Tabular { contexts, items } = self.spec {
            for x in 0..contexts {
                let row = &mut self.params.as_slice_mut().unwrap()[x * items..(x + 1) * items];
                let mean = row.iter().sum::<f64>() / items as f64;
                for v in row {
                    *v -= mean;
                }
            }
        }
    }

    /// Hidden pre-activations and embedding of one input vector.
    fn embed(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ModelSpec::CosineMlp {
            input,
            hidden,
            embed,
        } = self.spec
        else {
            panic!("embed is only defined for the cosine MLP kind");
        };
        let p = self.params.as_slice().unwrap();
        let (w1, b1, w2, b2) = mlp_offsets(input, hidden, embed);
        let mut pre = vec![0.0; hidden];
        for j in 0..hidden {
            let row = &p[w1 + j * input..w1 + (j + 1) * input];
            let mut acc = p[b1 + j];
            for (w, zi) in row.iter().zip(z) {
                acc += w * zi;
            }
            pre[j] = acc;
        }
        let mut out = vec![0.0; embed];
        for k in 0..embed {
            let row = &p[w2 + k * hidden..w2 + (k + 1) * hidden];
            let mut acc = p[b2 + k];
            for (w, pj) in row.iter().zip(&pre) {
                acc += w * pj.max(0.0);
            }
            out[k] = acc;
        }
        (pre, out)
    }

    /// Accumulate the parameter gradient of one embedding given its
    /// cotangent `de`.
    #[allow(clippy::too_many_arguments)]
    fn backward_embed(
        &self,
        z: &[f64],
        pre: &[f64],
        de: &[f64],
        grad: &mut [f64],
        input: usize,
        hidden: usize,
        embed: usize,
    ) {
        if de.iter().all(|&v| v == 0.0) {
            return;
        }
        let p = self.params.as_slice().unwrap();
        let (w1, b1, w2, b2) = mlp_offsets(input, hidden, embed);
        let mut dact = vec![0.0; hidden];
        for k in 0..embed {
            let dk = de[k];
            if dk == 0.0 {
                continue;
            }
            grad[b2 + k] += dk;
            let wrow = &p[w2 + k * hidden..w2 + (k + 1) * hidden];
            let grow = &mut grad[w2 + k * hidden..w2 + (k + 1) * hidden];
            for j in 0..hidden {
                grow[j] += dk * pre[j].max(0.0);
                dact[j] += dk * wrow[j];
            }
        }
        for j in 0..hidden {
            if pre[j] <= 0.0 || dact[j] == 0.0 {
                continue;
            }
            let dj = dact[j];
            grad[b1 + j] += dj;
            let grow = &mut grad[w1 + j * input..w1 + (j + 1) * input];
            for (g, zi) in grow.iter_mut().zip(z) {
                *g += dj * zi;
            }
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let dims = match self.spec {
            ModelSpec::Tabular { contexts, items } => {
                serde_json::json!({ "contexts": contexts, "items": items })
            }
            ModelSpec::Linear { dim } => serde_json::json!({ "dim": dim }),
            ModelSpec::CosineMlp {
                input,
                hidden,
                embed,
            } => serde_json::json!({ "input": input, "hidden": hidden, "embed": embed }),
        };
        serde_json::json!({
            "kind": self.spec.kind_name(),
            "dims": dims,
            "seed": self.seed,
            "parameters": self.params.to_vec(),
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            kind: String,
            dims: serde_json::Value,
            seed: u64,
            parameters: Vec<f64>,
        }
        let raw: Raw = serde_json::from_value(value.clone())?;
        let get = |key: &str| -> Result<usize> {
            raw.dims
                .get(key)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| Error::invalid(format!("missing dim {key}")))
        };
        let spec = match raw.kind.as_str() {
            "tabular" => ModelSpec::Tabular {
                contexts: get("contexts")?,
                items: get("items")?,
            },
            "linear" => ModelSpec::Linear { dim: get("dim")? },
            "cosine_mlp" => ModelSpec::CosineMlp {
                input: get("input")?,
                hidden: get("hidden")?,
                embed: get("embed")?,
            },
            other => return Err(Error::invalid(format!("unknown model kind {other}"))),
        };
        Self::from_params(spec, raw.seed, Array1::from_vec(raw.parameters))
    }
}

fn mlp_offsets(input: usize, hidden: usize, embed: usize) -> (usize, usize, usize, usize) {
    let w1 = 0;
    let b1 = w1 + hidden * input;
    let w2 = b1 + hidden;
    let b2 = w2 + embed * hidden;
    (w1, b1, w2, b2)
}

fn add_scaled(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// Guarded cosine similarity: `dot(u, v) / max(|u||v|, eps)`, clamped to
/// `[-1, 1]` against rounding overshoot.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    (dot / (nu * nv).max(COSINE_EPS)).clamp(-1.0, 1.0)
}

/// Gradients of [`cosine`] with respect to both arguments.
fn cosine_grads(u: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu2: f64 = u.iter().map(|a| a * a).sum();
    let nv2: f64 = v.iter().map(|a| a * a).sum();
    let prod = (nu2 * nv2).sqrt();
    if prod <= COSINE_EPS {
        // Guard active: treat the denominator as the constant eps.
        let du = v.iter().map(|&b| b / COSINE_EPS).collect();
        let dv = u.iter().map(|&a| a / COSINE_EPS).collect();
        return (du, dv);
    }
    let c = dot / prod;
    let du = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| b / prod - c * a / nu2)
        .collect();
    let dv = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| a / prod - c * b / nv2)
        .collect();
    (du, dv)
}

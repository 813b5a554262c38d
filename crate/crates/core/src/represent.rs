//! Bradley-Terry representability of a CPRD and conditionally independent
//! realizations.
//!
//! A CPRD admits a BT model exactly when its log-odds are consistent along
//! every cycle of the support graph. The check propagates log-odds scores
//! over a spanning tree per connected component and verifies every remaining
//! edge; a failing edge yields its fundamental cycle and the cycle's log-odds
//! sum (which a BT model would force to zero).
//!
//! The converse direction is constructive: from any score function and a
//! strictly positive base distribution `mu`, the pair
//! `p- ∝ mu`, `p+ ∝ mu * exp(r)` factorizes into a positive-negative
//! conditionally independent distribution whose CPRD is exactly
//! `sigma(r(x,y) - r(x,y'))`.

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scorers::ScoreTable;
use crate::tabular::{Cprd, TabularTripletDistribution};

/// Largest score magnitude fed to `exp` before overflow errors are raised.
pub const EXP_SAFE_LIMIT: f64 = 700.0;

/// A positive-negative conditionally independent triplet distribution,
/// stored as its factors: `P(x, y+, y-) = P_X(x) p+(y+|x) p-(y-|x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalPair {
    context_marginal: Array1<f64>,
    p_plus: Array2<f64>,
    p_minus: Array2<f64>,
}

impl ConditionalPair {
    /// Validating constructor. Rows of `p_plus` / `p_minus` are per-context
    /// distributions over items; `p_minus` must be positive wherever
    /// `p_plus` is, so the implied score stays finite.
    pub fn new(
        context_marginal: Array1<f64>,
        p_plus: Array2<f64>,
        p_minus: Array2<f64>,
    ) -> Result<Self> {
        let contexts = context_marginal.len();
        if p_plus.nrows() != contexts || p_minus.nrows() != contexts {
            return Err(Error::invalid("conditional rows must match context count"));
        }
        if p_plus.ncols() != p_minus.ncols() {
            return Err(Error::invalid("p_plus and p_minus must share item count"));
        }
        check_simplex(&context_marginal, "context marginal")?;
        for x in 0..contexts {
            check_simplex(&p_plus.row(x).to_owned(), "p_plus row")?;
            check_simplex(&p_minus.row(x).to_owned(), "p_minus row")?;
            for y in 0..p_plus.ncols() {
                if p_plus[[x, y]] > 0.0 && p_minus[[x, y]] == 0.0 {
                    return Err(Error::UndefinedScore {
                        context: x,
                        item: y,
                    });
                }
            }
        }
        Ok(Self {
            context_marginal,
            p_plus,
            p_minus,
        })
    }

    pub fn contexts(&self) -> usize {
        self.context_marginal.len()
    }

    pub fn items(&self) -> usize {
        self.p_plus.ncols()
    }

    pub fn context_marginal(&self) -> &Array1<f64> {
        &self.context_marginal
    }

    pub fn p_plus(&self) -> &Array2<f64> {
        &self.p_plus
    }

    pub fn p_minus(&self) -> &Array2<f64> {
        &self.p_minus
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows = |a: &Array2<f64>| -> Vec<Vec<f64>> {
            a.rows().into_iter().map(|r| r.to_vec()).collect()
        };
        serde_json::json!({
            "context_marginal": self.context_marginal.to_vec(),
            "p_plus": rows(&self.p_plus),
            "p_minus": rows(&self.p_minus),
        })
    }
}

fn check_simplex(v: &Array1<f64>, what: &str) -> Result<()> {
    if v.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::invalid(format!("{what} has negative entries")));
    }
    let s = v.sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("{what} sums to {s}, expected 1")));
    }
    Ok(())
}

/// A fundamental cycle of the support graph whose log-odds fail to cancel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolatingCycle {
    pub context: usize,
    /// Item indices around the cycle; the first edge is the failing one.
    pub items: Vec<usize>,
    /// Sum of directed log-odds around the cycle (zero under any BT model).
    pub log_odds_sum: f64,
}

/// Outcome of the representability check.
#[derive(Debug, Clone)]
pub struct RepresentabilityVerdict {
    pub representable: bool,
    /// Per-context witness scores, present iff representable. Scores are
    /// anchored at zero on an arbitrary root per connected component.
    pub witness_scores: Option<Vec<Array1<f64>>>,
    /// A failing cycle, present iff not representable.
    pub violating_cycle: Option<ViolatingCycle>,
    /// Largest relative edge residual observed over all supported edges.
    pub max_residual: f64,
}

impl RepresentabilityVerdict {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "representable": self.representable,
            "witness_scores": self
                .witness_scores
                .as_ref()
                .map(|w| w.iter().map(|s| s.to_vec()).collect::<Vec<_>>()),
            "violating_cycle": self.violating_cycle,
            "max_residual": self.max_residual,
        })
    }
}

/// Decide whether `cprd` is representable by a BT model.
///
/// Per context, scores are propagated along a BFS spanning tree of the
/// support graph from an arbitrary root at score zero, using the edge
/// log-odds `log(omega[i][j] / omega[j][i])`. Every supported edge is then
/// verified against `score[i] - score[j]` at relative tolerance
/// `tol * (1 + |log-odds|)`. Supported one-sided pairs (`omega` in `{0, 1}`)
/// are a dedicated error: no finite score reproduces them.
pub fn check_bt_representable(cprd: &Cprd, tol: f64) -> Result<RepresentabilityVerdict> {
    let m = cprd.items();
    let mut witnesses = Vec::with_capacity(cprd.contexts());
    let mut max_residual: f64 = 0.0;

    for x in 0..cprd.contexts() {
        for i in 0..m {
            for j in (i + 1)..m {
                if cprd.supported(x, i, j) {
                    let w = cprd.omega(x, i, j);
                    if w <= 0.0 || w >= 1.0 {
                        return Err(Error::OneSidedPair {
                            context: x,
                            i,
                            j,
                            omega: w,
                        });
                    }
                }
            }
        }

        let log_odds = |i: usize, j: usize| -> f64 {
            (cprd.omega(x, i, j) / cprd.omega(x, j, i)).ln()
        };

        // BFS spanning forest; score[root] = 0 per component.
        let mut score = Array1::<f64>::zeros(m);
        let mut visited = vec![false; m];
        let mut parent = vec![usize::MAX; m];
        for root in 0..m {
            if visited[root] {
                continue;
            }
            visited[root] = true;
            let mut queue = std::collections::VecDeque::from([root]);
            while let Some(i) = queue.pop_front() {
                for j in 0..m {
                    if !visited[j] && cprd.supported(x, i, j) {
                        visited[j] = true;
                        parent[j] = i;
                        // score[i] - score[j] = log_odds(i, j)
                        score[j] = score[i] - log_odds(i, j);
                        queue.push_back(j);
                    }
                }
            }
        }

        // Verify every supported edge; a failing edge closes a cycle with
        // the tree path between its endpoints.
        for i in 0..m {
            for j in (i + 1)..m {
                if !cprd.supported(x, i, j) {
                    continue;
                }
                let lo = log_odds(i, j);
                let residual = lo - (score[i] - score[j]);
                let rel = residual.abs() / (1.0 + lo.abs());
                max_residual = max_residual.max(rel);
                if rel > tol {
                    let items = fundamental_cycle(i, j, &parent);
                    return Ok(RepresentabilityVerdict {
                        representable: false,
                        witness_scores: None,
                        violating_cycle: Some(ViolatingCycle {
                            context: x,
                            items,
                            log_odds_sum: residual,
                        }),
                        max_residual: rel,
                    });
                }
            }
        }
        witnesses.push(score);
    }

    Ok(RepresentabilityVerdict {
        representable: true,
        witness_scores: Some(witnesses),
        violating_cycle: None,
        max_residual,
    })
}

/// Cycle formed by the non-tree edge `(i, j)` plus the tree path `j -> i`.
fn fundamental_cycle(i: usize, j: usize, parent: &[usize]) -> Vec<usize> {
    let path_to_root = |mut v: usize| -> Vec<usize> {
        let mut p = vec![v];
        while parent[v] != usize::MAX {
            v = parent[v];
            p.push(v);
        }
        p
    };
    let pi = path_to_root(i);
    let pj = path_to_root(j);
    // Drop the shared suffix down to the lowest common ancestor.
    let mut si = pi.len();
    let mut sj = pj.len();
    while si > 1 && sj > 1 && pi[si - 2] == pj[sj - 2] {
        si -= 1;
        sj -= 1;
    }
    let mut cycle = pi[..si].to_vec();
    cycle.extend(pj[..sj - 1].iter().rev());
    cycle
}

/// Construct the conditionally independent pair realizing a score table over
/// a strictly positive base distribution `mu`:
/// `p- ∝ mu`, `p+ ∝ mu * exp(r)`, normalized per context.
pub fn ci_factorize(scores: &ScoreTable, mu: &Array2<f64>) -> Result<ConditionalPair> {
    ci_factorize_with_marginal(scores, mu, &uniform_marginal(scores.nrows()))
}

/// As [`ci_factorize`] with an explicit context marginal.
pub fn ci_factorize_with_marginal(
    scores: &ScoreTable,
    mu: &Array2<f64>,
    context_marginal: &Array1<f64>,
) -> Result<ConditionalPair> {
    if scores.dim() != mu.dim() {
        return Err(Error::invalid("score table and mu must share shape"));
    }
    if mu.iter().any(|&v| v <= 0.0) {
        return Err(Error::invalid("base distribution mu must be strictly positive"));
    }
    let max_abs = scores.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    if max_abs > EXP_SAFE_LIMIT {
        return Err(Error::ScoreRange {
            max_abs,
            limit: EXP_SAFE_LIMIT,
        });
    }
    let (contexts, items) = scores.dim();
    let mut p_plus = Array2::zeros((contexts, items));
    let mut p_minus = Array2::zeros((contexts, items));
    for x in 0..contexts {
        let mut zp = 0.0;
        let mut zm = 0.0;
        for y in 0..items {
            let plus = mu[[x, y]] * scores[[x, y]].exp();
            p_plus[[x, y]] = plus;
            p_minus[[x, y]] = mu[[x, y]];
            zp += plus;
            zm += mu[[x, y]];
        }
        for y in 0..items {
            p_plus[[x, y]] /= zp;
            p_minus[[x, y]] /= zm;
        }
    }
    ConditionalPair::new(context_marginal.clone(), p_plus, p_minus)
}

fn uniform_marginal(contexts: usize) -> Array1<f64> {
    Array1::from_elem(contexts, 1.0 / contexts as f64)
}

/// Implied scores of a conditional pair with the support of `p_plus`.
#[derive(Debug, Clone)]
pub struct ImpliedScores {
    /// `log(p+ / p-)`; `-inf` where `p_plus = 0`.
    pub scores: Array2<f64>,
    /// True where the score is finite (`p_plus > 0`).
    pub finite: Array2<bool>,
}

/// The density-ratio score `r(x, y) = log(p+(y|x) / p-(y|x))`.
///
/// Items with `p_plus = 0` get a `-inf` sentinel and a cleared flag;
/// `p_plus > 0` with `p_minus = 0` is rejected at pair construction and
/// re-checked here.
pub fn implied_score(pair: &ConditionalPair) -> Result<ImpliedScores> {
    let (contexts, items) = pair.p_plus().dim();
    let mut scores = Array2::zeros((contexts, items));
    let mut finite = Array2::from_elem((contexts, items), true);
    for x in 0..contexts {
        for y in 0..items {
            let plus = pair.p_plus()[[x, y]];
            let minus = pair.p_minus()[[x, y]];
            if plus > 0.0 && minus == 0.0 {
                return Err(Error::UndefinedScore {
                    context: x,
                    item: y,
                });
            }
            if plus == 0.0 {
                scores[[x, y]] = f64::NEG_INFINITY;
                finite[[x, y]] = false;
            } else {
                scores[[x, y]] = (plus / minus).ln();
            }
        }
    }
    Ok(ImpliedScores { scores, finite })
}

/// Expand a pair into its product-form triplet table:
/// `T_x[i][j] = p+(i|x) * p-(j|x)`.
pub fn product_distribution(pair: &ConditionalPair) -> TabularTripletDistribution {
    let (contexts, items) = pair.p_plus().dim();
    let mut tables = Vec::with_capacity(contexts);
    for x in 0..contexts {
        let mut t = Array2::zeros((items, items));
        for i in 0..items {
            for j in 0..items {
                t[[i, j]] = pair.p_plus()[[x, i]] * pair.p_minus()[[x, j]];
            }
        }
        tables.push(t);
    }
    TabularTripletDistribution::new(pair.context_marginal().clone(), tables)
        .expect("product of valid conditionals is a valid table")
}

//! Exact pairwise evaluation: accuracy and its lower bound, margin
//! statistics, estimation and misspecification error.
//!
//! The pair distribution draws `x ~ Qx` and two iid responses from
//! `Qy(.|x)`; all expectations here are exact double sums over ordered
//! pairs, never Monte Carlo. Pairs the target ties exactly (margin zero,
//! including `y = y'`) carry no ordering information and are excluded from
//! accuracy numerators and denominators; a fitted margin of zero on a
//! non-tied pair counts as incorrect.

use crate::connectivity::TestDistributionQ;
use crate::error::{Error, Result};
use crate::scorers::ScoreTable;
use crate::tabular::{comparison_distribution, cprd_from_distribution, TabularTripletDistribution};
use crate::training::sigmoid;

fn check_shapes(fitted: &ScoreTable, target: &ScoreTable, q: &TestDistributionQ) {
    assert_eq!(fitted.dim(), target.dim(), "score table shapes");
    assert_eq!(
        fitted.dim(),
        (q.contexts(), q.items()),
        "score tables must match Q"
    );
}

/// Probability under the pair distribution that the fitted and target
/// margins point the same strict way.
pub fn accuracy(fitted: &ScoreTable, target: &ScoreTable, q: &TestDistributionQ) -> Result<f64> {
    check_shapes(fitted, target, q);
    let mut hit = 0.0;
    let mut total = 0.0;
    for_each_pair(q, |x, i, j, w| {
        let dt = target[[x, i]] - target[[x, j]];
        if dt == 0.0 {
            return;
        }
        total += w;
        let df = fitted[[x, i]] - fitted[[x, j]];
        if df.signum() == dt.signum() && df != 0.0 {
            hit += w;
        }
    });
    if total <= 0.0 {
        return Err(Error::UndefinedAccuracy);
    }
    Ok(hit / total)
}

/// Accuracy restricted to the fraction of pairs with the smallest absolute
/// target margins (weighted `frac`-quantile, ties at the threshold kept).
pub fn bottom_fraction_accuracy(
    fitted: &ScoreTable,
    target: &ScoreTable,
    q: &TestDistributionQ,
    frac: f64,
) -> Result<f64> {
    check_shapes(fitted, target, q);
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::invalid("frac must lie in (0, 1]"));
    }
    // Collect non-tied pairs with weights, ascending by |margin|.
    let mut pairs: Vec<(f64, f64)> = Vec::new(); // (|margin|, weight)
    let mut total = 0.0;
    for_each_pair(q, |x, i, j, w| {
        let dt = (target[[x, i]] - target[[x, j]]).abs();
        if dt > 0.0 {
            pairs.push((dt, w));
            total += w;
        }
    });
    if pairs.is_empty() || total <= 0.0 {
        return Err(Error::EmptySubset { frac });
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    let mut threshold = pairs.last().unwrap().0;
    for &(m, w) in &pairs {
        acc += w;
        if acc >= frac * total {
            threshold = m;
            break;
        }
    }

    let mut hit = 0.0;
    let mut mass = 0.0;
    for_each_pair(q, |x, i, j, w| {
        let dt = target[[x, i]] - target[[x, j]];
        if dt == 0.0 || dt.abs() > threshold {
            return;
        }
        mass += w;
        let df = fitted[[x, i]] - fitted[[x, j]];
        if df.signum() == dt.signum() && df != 0.0 {
            hit += w;
        }
    });
    if mass <= 0.0 {
        return Err(Error::EmptySubset { frac });
    }
    Ok(hit / mass)
}

/// `E_pair[(margin_fitted - margin_target)^2]`, the estimation error of the
/// margins. Tied responses (`y = y'`) contribute zero and are included.
pub fn estimation_error(fitted: &ScoreTable, target: &ScoreTable, q: &TestDistributionQ) -> f64 {
    check_shapes(fitted, target, q);
    let mut total = 0.0;
    for_each_pair_with_diagonal(q, |x, i, j, w| {
        let df = fitted[[x, i]] - fitted[[x, j]];
        let dt = target[[x, i]] - target[[x, j]];
        total += w * (df - dt) * (df - dt);
    });
    total
}

/// `E_comparison[(omega - sigma(margin))^2]`: how far the model's preference
/// probabilities sit from the distribution's CPRD, weighted by how often
/// pairs are compared.
pub fn misspecification_error(model: &ScoreTable, dist: &TabularTripletDistribution) -> Result<f64> {
    assert_eq!(
        model.dim(),
        (dist.contexts(), dist.items()),
        "model table must match distribution"
    );
    let cmp = comparison_distribution(dist)?;
    let cprd = cprd_from_distribution(dist);
    let mut total = 0.0;
    for (x, i, j, w) in cmp.iter_pairs() {
        let omega = cprd.omega(x, i, j);
        let p = sigmoid(model[[x, i]] - model[[x, j]]);
        total += w * (omega - p) * (omega - p);
    }
    Ok(total)
}

/// The accuracy lower bound: probability that the margin error is no larger
/// than the target margin itself. Pointwise, every pair counted here also
/// counts toward [`accuracy`].
pub fn accuracy_lower_bound(
    fitted: &ScoreTable,
    target: &ScoreTable,
    q: &TestDistributionQ,
) -> Result<f64> {
    check_shapes(fitted, target, q);
    let mut hit = 0.0;
    let mut total = 0.0;
    for_each_pair(q, |x, i, j, w| {
        let dt = target[[x, i]] - target[[x, j]];
        if dt == 0.0 {
            return;
        }
        total += w;
        let df = fitted[[x, i]] - fitted[[x, j]];
        if (df - dt).abs() <= dt.abs() {
            hit += w;
        }
    });
    if total <= 0.0 {
        return Err(Error::UndefinedAccuracy);
    }
    Ok(hit / total)
}

/// Weighted histogram of absolute target margins under the pair
/// distribution, with the survival function at each bin edge.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginHistogram {
    /// `bins + 1` edges spanning `[0, max |margin|]`.
    pub edges: Vec<f64>,
    /// Q_pair mass per bin; sums to 1.
    pub weights: Vec<f64>,
    /// `Pr(|margin| >= edge)` at each edge.
    pub survival: Vec<f64>,
    /// Smallest strictly positive margin, if any.
    pub min_positive_margin: Option<f64>,
}

/// Histogram of `|margin_target|` over the pair distribution (tied pairs
/// included as mass at zero).
pub fn margin_histogram(
    target: &ScoreTable,
    q: &TestDistributionQ,
    bins: usize,
) -> Result<MarginHistogram> {
    assert_eq!(target.dim(), (q.contexts(), q.items()));
    if bins == 0 {
        return Err(Error::invalid("bins must be >= 1"));
    }
    let mut samples: Vec<(f64, f64)> = Vec::new();
    let mut max_margin = 0.0_f64;
    let mut min_positive: Option<f64> = None;
    for_each_pair_with_diagonal(q, |x, i, j, w| {
        let m = (target[[x, i]] - target[[x, j]]).abs();
        samples.push((m, w));
        max_margin = max_margin.max(m);
        if m > 0.0 {
            min_positive = Some(min_positive.map_or(m, |cur: f64| cur.min(m)));
        }
    });
    let hi = if max_margin > 0.0 { max_margin } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|k| hi * k as f64 / bins as f64).collect();
    let mut weights = vec![0.0; bins];
    for &(m, w) in &samples {
        let mut idx = ((m / hi) * bins as f64).floor() as usize;
        if idx >= bins {
            idx = bins - 1;
        }
        weights[idx] += w;
    }
    let survival = edges
        .iter()
        .map(|&edge| {
            samples
                .iter()
                .filter(|&&(m, _)| m >= edge)
                .map(|&(_, w)| w)
                .sum()
        })
        .collect();
    Ok(MarginHistogram {
        edges,
        weights,
        survival,
        min_positive_margin: min_positive,
    })
}

/// Visit ordered distinct pairs with their Q_pair weights.
fn for_each_pair(q: &TestDistributionQ, mut visit: impl FnMut(usize, usize, usize, f64)) {
    for x in 0..q.contexts() {
        let px = q.context_prob(x);
        if px == 0.0 {
            continue;
        }
        for i in 0..q.items() {
            let pi = q.response_prob(x, i);
            if pi == 0.0 {
                continue;
            }
            for j in 0..q.items() {
                if i == j {
                    continue;
                }
                let w = px * pi * q.response_prob(x, j);
                if w > 0.0 {
                    visit(x, i, j, w);
                }
            }
        }
    }
}

/// Visit all ordered pairs including `i = j`.
fn for_each_pair_with_diagonal(
    q: &TestDistributionQ,
    mut visit: impl FnMut(usize, usize, usize, f64),
) {
    for x in 0..q.contexts() {
        let px = q.context_prob(x);
        if px == 0.0 {
            continue;
        }
        for i in 0..q.items() {
            let pi = q.response_prob(x, i);
            if pi == 0.0 {
                continue;
            }
            for j in 0..q.items() {
                let w = px * pi * q.response_prob(x, j);
                if w > 0.0 {
                    visit(x, i, j, w);
                }
            }
        }
    }
}

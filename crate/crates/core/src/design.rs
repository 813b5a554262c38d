//! Constructing BT-consistent triplet distributions for a target score and
//! sampling datasets from them.
//!
//! A pair `(p+, p-)` is BT-consistent with a target `r*` when
//! `p+ ∝ exp(r*) * p-` per context; fitting a BT model on such data recovers
//! `r*` up to a per-context shift (which no margin, CPRD, or accuracy can
//! see). Negatives come in one family: `p-(y|x) ∝ exp(alpha * r*(x, y))`,
//! with `alpha = 0` the uniform default, positive alpha preferring hard
//! (high-score) negatives, negative alpha easy ones.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::items::{Triplet, TripletDataset};
use crate::represent::{ConditionalPair, EXP_SAFE_LIMIT};
use crate::rng;
use crate::scorers::ScoreTable;

/// Contexts whose off-diagonal mass falls below this are unsampleable.
const MIN_OFF_DIAGONAL_MASS: f64 = 1e-14;

/// Build the BT-consistent pair for `target` over the given negatives:
/// `p+ ∝ exp(r*) * p-`, normalized per context, with a uniform context
/// marginal.
///
/// The per-context normalization shifts the implied score by a constant,
/// which is exactly the freedom BT leaves undetermined; margins match the
/// target's exactly.
pub fn bt_consistent_pair(target: &ScoreTable, p_minus: &Array2<f64>) -> Result<ConditionalPair> {
    bt_consistent_pair_with_marginal(
        target,
        p_minus,
        &Array1::from_elem(target.nrows(), 1.0 / target.nrows() as f64),
    )
}

/// As [`bt_consistent_pair`] with an explicit context marginal.
pub fn bt_consistent_pair_with_marginal(
    target: &ScoreTable,
    p_minus: &Array2<f64>,
    context_marginal: &Array1<f64>,
) -> Result<ConditionalPair> {
    if target.dim() != p_minus.dim() {
        return Err(Error::invalid("target and p_minus must share shape"));
    }
    let max_abs = target.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    if max_abs > EXP_SAFE_LIMIT {
        return Err(Error::ScoreRange {
            max_abs,
            limit: EXP_SAFE_LIMIT,
        });
    }
    let (contexts, items) = target.dim();
    let mut p_plus = Array2::zeros((contexts, items));
    for x in 0..contexts {
        let mut z = 0.0;
        for y in 0..items {
            let v = p_minus[[x, y]] * target[[x, y]].exp();
            p_plus[[x, y]] = v;
            z += v;
        }
        if z <= 0.0 {
            return Err(Error::invalid(format!("context {x} has no admissible items")));
        }
        for y in 0..items {
            p_plus[[x, y]] /= z;
        }
    }
    ConditionalPair::new(context_marginal.clone(), p_plus, p_minus.clone())
}

/// The exponential-tilt negative family: `p-(y|x) ∝ exp(alpha * r*(x, y))`.
/// `alpha = 0` is exactly uniform.
pub fn alpha_negative(target: &ScoreTable, alpha: f64) -> Result<Array2<f64>> {
    if !alpha.is_finite() {
        return Err(Error::invalid("alpha must be finite"));
    }
    let (contexts, items) = target.dim();
    let mut out = Array2::zeros((contexts, items));
    for x in 0..contexts {
        let row: Vec<f64> = (0..items).map(|y| alpha * target[[x, y]]).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (y, &l) in row.iter().enumerate() {
            let v = (l - max).exp();
            out[[x, y]] = v;
            z += v;
        }
        for y in 0..items {
            out[[x, y]] /= z;
        }
    }
    Ok(out)
}

/// Order-preserving rescaling onto the even grid
/// `-1 + 2k/m, k = 1..m` per context, which maximizes the minimum pairwise
/// margin at `2/m`. Ties break by ascending item index, so the output is
/// deterministic.
pub fn rank_normalize(target: &ScoreTable) -> ScoreTable {
    let (contexts, items) = target.dim();
    let mut out = Array2::zeros((contexts, items));
    let m = items as f64;
    for x in 0..contexts {
        let mut order: Vec<usize> = (0..items).collect();
        order.sort_by(|&a, &b| {
            target[[x, a]]
                .total_cmp(&target[[x, b]])
                .then(a.cmp(&b))
        });
        for (k, &y) in order.iter().enumerate() {
            // rank in {1..m}, ascending
            out[[x, y]] = -1.0 + 2.0 * (k + 1) as f64 / m;
        }
    }
    out
}

/// Margin scaling: `r*_beta = beta * r*`.
pub fn scale_score(target: &ScoreTable, beta: f64) -> Result<ScoreTable> {
    if !beta.is_finite() {
        return Err(Error::invalid("beta must be finite"));
    }
    Ok(target.mapv(|v| beta * v))
}

/// Draw `n` iid triplets: `x ~ context marginal`, `y+ ~ p+(.|x)`,
/// `y- ~ p-(.|x)`, jointly redrawing the response pair whenever it ties.
/// Deterministic given `seed`.
pub fn sample_triplets(pair: &ConditionalPair, n: usize, seed: u64) -> Result<TripletDataset> {
    if n == 0 {
        return Err(Error::invalid("sample size must be >= 1"));
    }
    let mut stream = rng::stream_tagged(seed, "sampler", &[]);
    let ctx_cdf = cdf(pair.context_marginal().as_slice().unwrap());
    let plus_cdfs: Vec<Vec<f64>> = (0..pair.contexts())
        .map(|x| cdf(pair.p_plus().row(x).to_slice().unwrap()))
        .collect();
    let minus_cdfs: Vec<Vec<f64>> = (0..pair.contexts())
        .map(|x| cdf(pair.p_minus().row(x).to_slice().unwrap()))
        .collect();

    let mut triplets = Vec::with_capacity(n);
    for _ in 0..n {
        let x = draw(&ctx_cdf, &mut stream);
        let mut rejections = 0;
        let (pos, neg) = loop {
            let pos = draw(&plus_cdfs[x], &mut stream);
            let neg = draw(&minus_cdfs[x], &mut stream);
            if pos != neg {
                break (pos, neg);
            }
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(Error::SamplerStuck {
                    context: x,
                    limit: MAX_REJECTIONS,
                });
            }
        };
        triplets.push(Triplet::new(x, pos, neg));
    }
    TripletDataset::new(triplets, format!("pair-m{}", pair.items()), seed)
}

fn cdf(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(probs.len());
    for &p in probs {
        acc += p;
        out.push(acc);
    }
    // Guard the top against rounding so the last index is always reachable.
    if let Some(last) = out.last_mut() {
        *last = f64::INFINITY;
    }
    out
}

fn draw(cdf: &[f64], stream: &mut ChaCha8Rng) -> usize {
    let u: f64 = stream.random();
    cdf.partition_point(|&c| c <= u)
}

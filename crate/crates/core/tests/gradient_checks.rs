//! Central finite-difference oracle for the analytic margin gradients.

use ndarray::Array1;
use preflab_core::items::ItemSet;
use preflab_core::scorers::{FeatureMap, ModelInputs, ModelSpec, ScoreModel};
use rand::Rng;

const FD_STEP: f64 = 1e-5;
/// Pre-activations this close to a ReLU kink disqualify a sample point.
const KINK_MARGIN: f64 = 1e-3;

/// Margin via two fresh forward passes at perturbed parameters.
fn margin_at(
    model: &ScoreModel,
    params: &Array1<f64>,
    inputs: ModelInputs<'_>,
    x: usize,
    p: usize,
    n: usize,
) -> f64 {
    let probe = ScoreModel::from_params(model.spec(), model.seed(), params.clone()).unwrap();
    probe.pairwise_margin(inputs, x, p, n)
}

/// True when every hidden pre-activation of the involved items is at least
/// `KINK_MARGIN` away from zero and no embedding is near-collapsed (which
/// would activate the cosine guard instead of the smooth branch).
fn away_from_kinks(model: &ScoreModel, items: &ItemSet, ids: &[usize]) -> bool {
    let ModelSpec::CosineMlp { input, hidden, .. } = model.spec() else {
        return true;
    };
    let p = model.params().as_slice().unwrap();
    for &id in ids {
        let z = items.row(id);
        let mut dead = true;
        for j in 0..hidden {
            let row = &p[j * input..(j + 1) * input];
            let mut acc = p[hidden * input + j];
            for (w, zi) in row.iter().zip(z.iter()) {
                acc += w * zi;
            }
            if acc.abs() < KINK_MARGIN {
                return false;
            }
            if acc > 0.0 {
                dead = false;
            }
        }
        if dead {
            return false;
        }
    }
    true
}

#[test]
fn mlp_margin_gradient_matches_central_differences() {
    let spec = ModelSpec::CosineMlp {
        input: 10,
        hidden: 6,
        embed: 4,
    };
    let items = ItemSet::gaussian(6, 10, 2001).unwrap();
    let inputs = ModelInputs::items(&items);
    let mut stream = preflab_core::rng::stream(909, &[]);
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < 12 {
        seed += 1;
        let model = ScoreModel::init(spec, seed);
        let x = stream.random_range(0..6);
        let p = stream.random_range(0..6);
        let mut n = stream.random_range(0..6);
        if p == n {
            n = (n + 1) % 6;
        }
        if !away_from_kinks(&model, &items, &[x, p, n]) {
            continue;
        }
        checked += 1;

        let analytic = model.score_gradient(inputs, x, p, n);
        let grad_scale = analytic.iter().fold(0.0_f64, |a, &g| a.max(g.abs()));
        let base = model.params().clone();
        for k in 0..base.len() {
            let mut plus = base.clone();
            plus[k] += FD_STEP;
            let mut minus = base.clone();
            minus[k] -= FD_STEP;
            let fd = (margin_at(&model, &plus, inputs, x, p, n)
                - margin_at(&model, &minus, inputs, x, p, n))
                / (2.0 * FD_STEP);
            let err = (analytic[k] - fd).abs();
            let scale = fd.abs().max(analytic[k].abs()).max(1e-3 * grad_scale);
            assert!(
                err <= 1e-4 * scale.max(1e-9),
                "coord {k}: analytic {} vs fd {} (err {err:.3e})",
                analytic[k],
                fd
            );
        }
    }
}

#[test]
fn linear_margin_gradient_matches_central_differences() {
    let mut stream = preflab_core::rng::stream(77, &[]);
    let mut blocks = Vec::new();
    for _ in 0..3 {
        let mut block = ndarray::Array2::zeros((4, 5));
        for v in block.iter_mut() {
            *v = stream.random::<f64>() - 0.5;
        }
        blocks.push(block);
    }
    let feats = FeatureMap::new(blocks).unwrap();
    let inputs = ModelInputs::features(&feats);
    let mut params = Array1::zeros(5);
    for v in params.iter_mut() {
        *v = stream.random::<f64>() - 0.5;
    }
    let model = ScoreModel::from_params(ModelSpec::Linear { dim: 5 }, 0, params).unwrap();
    let analytic = model.score_gradient(inputs, 2, 1, 3);
    let base = model.params().clone();
    for k in 0..5 {
        let mut plus = base.clone();
        plus[k] += FD_STEP;
        let mut minus = base.clone();
        minus[k] -= FD_STEP;
        let fd = (margin_at(&model, &plus, inputs, 2, 1, 3)
            - margin_at(&model, &minus, inputs, 2, 1, 3))
            / (2.0 * FD_STEP);
        assert!((analytic[k] - fd).abs() < 1e-8);
    }
}

#[test]
fn vjp_of_random_cotangent_matches_directional_differences() {
    // <vjp(cot), e_k> checked against d/dh sum(cot * table(params + h e_k)).
    let spec = ModelSpec::CosineMlp {
        input: 7,
        hidden: 5,
        embed: 3,
    };
    let items = ItemSet::gaussian(5, 7, 321).unwrap();
    let inputs = ModelInputs::items(&items);
    let model = ScoreModel::init(spec, 5);
    let mut stream = preflab_core::rng::stream(31, &[]);
    let mut cot = ndarray::Array2::zeros((5, 5));
    for v in cot.iter_mut() {
        *v = stream.random::<f64>() - 0.5;
    }
    let grad = model.score_table_vjp(inputs, &cot);
    let objective = |params: &Array1<f64>| -> f64 {
        let probe = ScoreModel::from_params(spec, 0, params.clone()).unwrap();
        (&probe.score_table(inputs) * &cot).sum()
    };
    let base = model.params().clone();
    for k in (0..base.len()).step_by(7) {
        let mut plus = base.clone();
        plus[k] += FD_STEP;
        let mut minus = base.clone();
        minus[k] -= FD_STEP;
        let fd = (objective(&plus) - objective(&minus)) / (2.0 * FD_STEP);
        assert!(
            (grad[k] - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
            "coord {k}: {} vs {}",
            grad[k],
            fd
        );
    }
}

//! Property checks tying conditional independence to BT structure.

use ndarray::{Array1, Array2};
use preflab_core::represent::{
    check_bt_representable, ci_factorize, implied_score, product_distribution, ConditionalPair,
};
use preflab_core::tabular::cprd_from_distribution;
use preflab_core::training::sigmoid;
use rand::Rng;

fn random_simplex_row(stream: &mut impl Rng, m: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..m).map(|_| stream.random::<f64>() + 0.05).collect();
    let total: f64 = row.iter().sum();
    for v in &mut row {
        *v /= total;
    }
    row
}

fn random_pair(stream: &mut impl Rng, contexts: usize, items: usize) -> ConditionalPair {
    let marginal = Array1::from_vec(random_simplex_row(stream, contexts));
    let mut plus = Array2::zeros((contexts, items));
    let mut minus = Array2::zeros((contexts, items));
    for x in 0..contexts {
        let p = random_simplex_row(stream, items);
        let q = random_simplex_row(stream, items);
        for y in 0..items {
            plus[[x, y]] = p[y];
            minus[[x, y]] = q[y];
        }
    }
    ConditionalPair::new(marginal, plus, minus).unwrap()
}

#[test]
fn product_of_independent_pair_is_always_bt_representable() {
    let mut stream = preflab_core::rng::stream(600, &[]);
    for trial in 0..100 {
        let contexts = stream.random_range(1..4);
        let items = stream.random_range(2..9);
        let pair = random_pair(&mut stream, contexts, items);
        let dist = product_distribution(&pair);
        let cprd = cprd_from_distribution(&dist);
        let verdict = check_bt_representable(&cprd, 1e-9).unwrap();
        assert!(
            verdict.representable,
            "trial {trial} (contexts {contexts}, items {items}) not representable: {:?}",
            verdict.violating_cycle
        );
        // Witness scores reproduce the CPRD on every supported pair.
        let witnesses = verdict.witness_scores.unwrap();
        for (x, i, j, omega) in cprd.iter_supported() {
            let p = sigmoid(witnesses[x][i] - witnesses[x][j]);
            assert!(
                (p - omega).abs() < 1e-9,
                "witness mismatch at ({x},{i},{j}): {p} vs {omega}"
            );
        }
    }
}

#[test]
fn factorize_then_implied_score_is_a_per_context_shift() {
    let mut stream = preflab_core::rng::stream(601, &[]);
    for _ in 0..50 {
        let contexts = stream.random_range(1..3);
        let items = 5;
        let mut scores = Array2::zeros((contexts, items));
        for v in scores.iter_mut() {
            *v = (stream.random::<f64>() - 0.5) * 4.0;
        }
        let mut mu = Array2::zeros((contexts, items));
        for x in 0..contexts {
            let row = random_simplex_row(&mut stream, items);
            for y in 0..items {
                mu[[x, y]] = row[y];
            }
        }
        let pair = ci_factorize(&scores, &mu).unwrap();
        let implied = implied_score(&pair).unwrap();
        for x in 0..contexts {
            let deltas: Vec<f64> = (0..items)
                .map(|y| implied.scores[[x, y]] - scores[[x, y]])
                .collect();
            let mean = deltas.iter().sum::<f64>() / items as f64;
            for d in &deltas {
                assert!(
                    (d - mean).abs() <= 1e-10,
                    "shift not constant within context {x}: {deltas:?}"
                );
            }
        }
    }
}

#[test]
fn cprd_reversal_complements_omega() {
    let mut stream = preflab_core::rng::stream(602, &[]);
    for _ in 0..30 {
        let pair = random_pair(&mut stream, 2, 5);
        let dist = product_distribution(&pair);
        let fwd = cprd_from_distribution(&dist);
        let rev = cprd_from_distribution(&dist.transposed());
        for (x, i, j, omega) in fwd.iter_supported() {
            assert!(rev.supported(x, i, j));
            assert!((rev.omega(x, i, j) - (1.0 - omega)).abs() < 1e-12);
        }
    }
}

#[test]
fn omega_pairs_sum_to_one_on_support() {
    let mut stream = preflab_core::rng::stream(603, &[]);
    for _ in 0..30 {
        let pair = random_pair(&mut stream, 3, 6);
        let cprd = cprd_from_distribution(&product_distribution(&pair));
        for (x, i, j, omega) in cprd.iter_supported() {
            let back = cprd.omega(x, j, i);
            assert!((omega + back - 1.0).abs() <= 1e-12);
        }
    }
}

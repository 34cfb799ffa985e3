mod common;

use common::brute_force_accuracy_on_correct;
use rand::Rng;
use shapebias_core::eval::accuracy_on_correct_from_outcomes;
use shapebias_core::rng::rng_from;

fn outcomes(labels: &[usize], preds: &[usize]) -> Vec<bool> {
    labels.iter().zip(preds).map(|(a, b)| a == b).collect()
}

#[test]
fn matches_two_pass_definition_on_mock_tables() {
    for seed in 0..200 {
        let mut rng = rng_from(seed);
        let n = rng.random_range(1..60);
        let k = rng.random_range(2..6);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let clean: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let trans: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let got = accuracy_on_correct_from_outcomes(&outcomes(&labels, &clean), &outcomes(&labels, &trans)).unwrap();
        assert_eq!(got, brute_force_accuracy_on_correct(&labels, &clean, &trans), "table {seed}");
    }
}

#[test]
fn identity_transform_scores_one() {
    let labels = [0, 1, 2, 1, 0];
    let preds = [0, 2, 2, 1, 1];
    let o = outcomes(&labels, &preds);
    assert_eq!(accuracy_on_correct_from_outcomes(&o, &o).unwrap(), Some(1.0));
}

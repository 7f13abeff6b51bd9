//! Property tests for the update-rule and sampling invariants.

use proptest::prelude::*;
use sgdlab::optimizers::{
    coupled_update_distance, minibatch_step, minibatch_step_count_form, StepSchedule,
};
use sgdlab::problems::{
    empirical_risk, generate_dataset, loss_grad, loss_value, Dataset, Example, GeneratorSpec,
    ProblemKind,
};
use sgdlab::sampling::{index_counts, DrawRecord};

fn dataset(kind: ProblemKind, d: usize, n: usize, seed: u64) -> (Dataset, sgdlab::problems::ProblemInstance) {
    generate_dataset(&GeneratorSpec::new(kind, d, n, 0.4, seed)).unwrap()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

proptest! {
    // Index-count partition: counts always tally the draws and sum to b.
    #[test]
    fn counts_partition_draws(indices in proptest::collection::vec(0usize..20, 1..64)) {
        let counts = index_counts(&indices, 20);
        prop_assert_eq!(counts.iter().sum::<u32>() as usize, indices.len());
        for (m, &c) in counts.iter().enumerate() {
            prop_assert_eq!(c as usize, indices.iter().filter(|&&i| i == m).count());
        }
    }

    // The index-form update equals the count-form reformulation.
    #[test]
    fn step_reformulation_equivalence(
        indices in proptest::collection::vec(0usize..12, 2..10),
        w in proptest::collection::vec(-2.0f64..2.0, 4),
        eta in 0.01f64..1.9,
    ) {
        let (data, p) = dataset(ProblemKind::LeastSquares, 4, 12, 5);
        let counts = index_counts(&indices, 12);
        let rec = DrawRecord { t: 0, indices, counts: counts.clone() };
        let a = minibatch_step(&p, &data, &w, &rec, eta);
        let b = minibatch_step_count_form(&p, &data, &w, &counts, eta);
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() <= 1e-12, "index form {} vs count form {}", x, y);
        }
    }

    // Gradient updates on convex losses are nonexpansive for eta <= 2/L.
    #[test]
    fn convex_update_nonexpansive(
        w in proptest::collection::vec(-3.0f64..3.0, 4),
        w2 in proptest::collection::vec(-3.0f64..3.0, 4),
        idx in 0usize..12,
        frac in 0.0f64..1.0,
        logistic in any::<bool>(),
    ) {
        let kind = if logistic { ProblemKind::Logistic } else { ProblemKind::LeastSquares };
        let (data, p) = dataset(kind, 4, 12, 6);
        let eta = frac * 2.0 / p.smoothness;
        let after = coupled_update_distance(&p, &w, &w2, &data.examples[idx], eta);
        prop_assert!(after <= dist(&w, &w2) + 1e-10);
    }

    // Losses are nonnegative and self-bounding on every family.
    #[test]
    fn loss_nonnegative_and_self_bounding(
        w in proptest::collection::vec(-4.0f64..4.0, 4),
        idx in 0usize..12,
        kind_sel in 0usize..3,
    ) {
        let kind = [ProblemKind::LeastSquares, ProblemKind::Logistic, ProblemKind::RidgeLeastSquares][kind_sel];
        let (data, p) = dataset(kind, 4, 12, 7);
        let z = &data.examples[idx];
        let f = loss_value(&p, &w, z);
        prop_assert!(f >= 0.0);
        let g = loss_grad(&p, &w, z);
        let gsq: f64 = g.iter().map(|v| v * v).sum();
        prop_assert!(gsq <= 2.0 * p.smoothness * f + 1e-10);
    }

    // Duplicating every example leaves the empirical risk unchanged.
    #[test]
    fn empirical_risk_average_invariance(w in proptest::collection::vec(-2.0f64..2.0, 3)) {
        let (data, p) = dataset(ProblemKind::LeastSquares, 3, 10, 8);
        let doubled = Dataset {
            examples: data.examples.iter().chain(data.examples.iter()).cloned().collect::<Vec<Example>>(),
        };
        let a = empirical_risk(&p, &data, &w);
        let b = empirical_risk(&p, &doubled, &w);
        prop_assert!((a - b).abs() <= 1e-12);
    }

    // Recorded averaging weights are convex: the uniform average of a run
    // lies in the convex hull coordinate-wise (checked against min/max).
    #[test]
    fn uniform_average_in_hull(seed in 0u64..32, rounds in 2usize..12) {
        let (data, p) = dataset(ProblemKind::LeastSquares, 3, 10, 9);
        let cfg = sgdlab::optimizers::MinibatchConfig::new(
            2, rounds, StepSchedule::Constant { eta: 0.4 }, seed,
        );
        let traj = sgdlab::optimizers::run_minibatch_sgd(&p, &data, &cfg).unwrap();
        let iterates: Vec<&Vec<f64>> = traj
            .logged_iterates
            .iter()
            .filter(|(k, _)| (1..=rounds).contains(k))
            .map(|(_, w)| w)
            .collect();
        for i in 0..3 {
            let lo = iterates.iter().map(|w| w[i]).fold(f64::INFINITY, f64::min);
            let hi = iterates.iter().map(|w| w[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(traj.averages.uniform[i] >= lo - 1e-12 && traj.averages.uniform[i] <= hi + 1e-12);
        }
    }
}

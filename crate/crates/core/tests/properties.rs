use ladg::compactness::{avg_knn_degree, coding_rate};
use ladg::graph::{build_affinity, knn_neighbors, GraphMode};
use ladg::labelprop::{one_hot, propagate_closed_form, propagate_iterative, SeedMode};
use ladg::losses::{prior_matching_loss, PriorDistribution};
use ladg::numerics::{Matrix, Tape};
use ladg::rng::Rng;
use ladg::trainer::mixing_entropy;
use proptest::prelude::*;

/// Random features and domain ids with every domain present.
fn instance(seed: u64, n: usize, s: usize, d: usize) -> (Matrix, Vec<usize>) {
    let mut rng = Rng::new(seed);
    let g = rng.normal_matrix(n, d);
    let ids = (0..n).map(|i| if i < s { i } else { rng.below(s) }).collect();
    (g, ids)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn propagated_probabilities_are_distributions(
        seed in any::<u64>(), n in 6usize..40, s in 1usize..6, alpha in 0.05f64..0.95, loo in any::<bool>(),
    ) {
        let s = s.min(n);
        let (g, ids) = instance(seed, n, s, 4);
        let e = one_hot(&ids, s).unwrap();
        let nb = knn_neighbors(&g, 5).unwrap();
        let graph = build_affinity(&g, &nb, 2.0, GraphMode::Symmetric).unwrap();
        let mode = if loo { SeedMode::LeaveOneOut } else { SeedMode::Literal };
        let p = propagate_closed_form(&graph, &e, alpha, mode).unwrap().probs;
        for i in 0..n {
            let row = p.row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn row_stochastic_scores_keep_unit_mass(seed in any::<u64>(), n in 6usize..40, s in 2usize..5) {
        let (g, ids) = instance(seed, n, s, 3);
        let e = one_hot(&ids, s).unwrap();
        let nb = knn_neighbors(&g, 4).unwrap();
        let graph = build_affinity(&g, &nb, 2.0, GraphMode::RowStochastic).unwrap();
        let r = propagate_closed_form(&graph, &e, 0.8, SeedMode::Literal).unwrap().r_star;
        for i in 0..n {
            prop_assert!((r.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(r.row(i).iter().all(|&v| v >= -1e-12));
        }
    }

    #[test]
    fn iteration_reaches_the_closed_form(
        seed in any::<u64>(), n in 3usize..50, s in 2usize..6, sym in any::<bool>(),
    ) {
        let s = s.min(n);
        let (g, ids) = instance(seed, n, s, 5);
        let e = one_hot(&ids, s).unwrap();
        let nb = knn_neighbors(&g, 10.min(n - 1)).unwrap();
        let mode = if sym { GraphMode::Symmetric } else { GraphMode::RowStochastic };
        let graph = build_affinity(&g, &nb, 2.0, mode).unwrap();
        let closed = propagate_closed_form(&graph, &e, 0.8, SeedMode::Literal).unwrap();
        let iter = propagate_iterative(&graph, &e, 0.8, 100_000, 1e-13).unwrap();
        prop_assert!(closed.r_star.max_abs_diff(&iter.r_star).unwrap() <= 1e-6);
    }

    #[test]
    fn prior_loss_is_bounded_by_the_prior_entropy(seed in any::<u64>(), n in 1usize..30, s in 1usize..6, scale in 0.0f64..10.0) {
        let mut rng = Rng::new(seed);
        let raw: Vec<f64> = (0..s).map(|_| rng.uniform() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let mut q: Vec<f64> = raw.iter().map(|v| v / total).collect();
        q[s - 1] = 1.0 - q[..s - 1].iter().sum::<f64>();
        let prior = PriorDistribution::new(q).unwrap();
        let tape = Tape::new();
        let p = tape.constant(rng.normal_matrix(n, s).scale(scale)).row_softmax();
        let loss = prior_matching_loss(p, &prior).unwrap().scalar().unwrap();
        prop_assert!(loss >= prior.entropy() - 1e-12);
    }

    #[test]
    fn coding_rate_ignores_row_scale(seed in any::<u64>(), n in 2usize..30, d in 1usize..8, c in 0.01f64..100.0) {
        let h = Rng::new(seed).normal_matrix(n, d);
        let r = coding_rate(&h, 0.5).unwrap();
        prop_assert!(r >= 0.0);
        prop_assert!((r - coding_rate(&h.scale(c), 0.5).unwrap()).abs() < 1e-9);
        // ½ log det(I + d/(nε²) HᵀH) ≤ ½ d log(1 + 1/ε²) for unit rows (AM-GM on the eigenvalues)
        prop_assert!(r <= 0.5 * d as f64 * (1.0 + 1.0 / 0.25f64).ln() + 1e-9);
    }

    #[test]
    fn knn_degree_is_bounded_by_k(seed in any::<u64>(), n in 2usize..30, k in 1usize..8) {
        let h = Rng::new(seed).normal_matrix(n, 3);
        let k = k.min(n - 1);
        let v = avg_knn_degree(&h, k).unwrap();
        prop_assert!(v <= k as f64 + 1e-12 && v >= -(k as f64) - 1e-12);
    }

    #[test]
    fn mixing_entropy_is_bounded(seed in any::<u64>(), n in 3usize..40, s in 1usize..6, k in 1usize..8) {
        let (h, ids) = instance(seed, n, s.min(n), 3);
        let k = k.min(n - 1);
        let m = mixing_entropy(&h, &ids, k).unwrap();
        prop_assert!(m >= 0.0);
        prop_assert!(m <= (k.min(s) as f64).ln() + 1e-12);
    }
}

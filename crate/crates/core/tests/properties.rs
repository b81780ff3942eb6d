mod common;

use common::{brute_accuracy, random_dataset, Problem, Shape};
use fairtree::metrics::{accuracy, balance, mnce, nmi, GroupContingency};
use fairtree::{fit_ifct, fit_ifct_p, model_io, FitConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPE: Shape = Shape {
    n_max: 40,
    d_num_max: 2,
    d_cat_max: 2,
    card_max: 4,
    sens_max: 2,
};

fn labels(max: usize, len: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    len.prop_flat_map(move |n| (prop::collection::vec(0..max, n), prop::collection::vec(0..max, n)))
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn accuracy_matches_brute_force((pred, truth) in labels(4, 1..25)) {
        let a = accuracy(&pred, &truth).unwrap();
        prop_assert!(close(a, brute_accuracy(&pred, &truth), 1e-12));
    }

    #[test]
    fn scores_ignore_cluster_names((pred, truth) in labels(5, 1..40), shift in 1usize..5) {
        let renamed: Vec<usize> = pred.iter().map(|&c| (c + shift) % 5 + 100).collect();
        prop_assert!(close(accuracy(&pred, &truth).unwrap(), accuracy(&renamed, &truth).unwrap(), 1e-12));
        prop_assert!(close(nmi(&pred, &truth).unwrap(), nmi(&renamed, &truth).unwrap(), 1e-12));
    }

    #[test]
    fn nmi_is_symmetric_and_bounded((pred, truth) in labels(4, 1..40)) {
        let a = nmi(&pred, &truth).unwrap();
        prop_assert!(close(a, nmi(&truth, &pred).unwrap(), 1e-12));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
    }

    #[test]
    fn fairness_metrics_are_bounded(n in 4usize..60, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(1..=3usize);
        let mut clusters: Vec<usize> = (0..n).map(|i| i % k).collect();
        clusters.rotate_left(rng.random_range(0..n));
        let groups: Vec<u32> = (0..n).map(|i| if i < 2 { i as u32 } else { rng.random_range(0..3) }).collect();
        let gc = GroupContingency::new(&clusters, k, &[&groups], &[3]).unwrap();
        let present = gc.group_sizes[0].iter().filter(|&&s| s > 0).count() as f64;
        let b = balance(&gc, 0).unwrap();
        prop_assert!(b >= 0.0 && b <= 1.0 / present + 1e-12);
        let m = mnce(&gc, 0).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&m));
    }
}

#[test]
fn fitted_trees_route_round_trip_and_add_up() {
    let mut fitted = 0;
    for seed in 0..60u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = random_dataset(&mut rng, SHAPE);
        let k = rng.random_range(1..=4usize);
        let lambda = [0.0, 1.0, 100.0][rng.random_range(0..3)];
        let cfg = FitConfig::with_k(k).lambda(lambda);
        let trees = [fit_ifct(&ds, &cfg), fit_ifct_p(&ds, &cfg.clone().lambda(0.0))];
        for tree in trees {
            let tree = match tree {
                Ok(t) => t,
                // IFCT-P needs at least two groups somewhere
                Err(e) => {
                    assert!(
                        e.to_string().contains("sensitive") || e.to_string().contains("insufficient"),
                        "{e}"
                    );
                    continue;
                }
            };
            fitted += 1;
            let assign = tree.assignments().expect("fitted tree keeps assignments").to_vec();
            for (i, &c) in assign.iter().enumerate() {
                assert_eq!(tree.route_row(&ds, i), c, "seed {seed}, row {i}");
            }

            let bytes = model_io::save(&tree).unwrap();
            let again = model_io::save(&model_io::load(&bytes).unwrap()).unwrap();
            assert_eq!(bytes, again, "seed {seed}");

            let oracle_lambda = if tree.algorithm() == fairtree::Algorithm::Ifct {
                lambda
            } else {
                0.0
            };
            let p = Problem::new(&ds, oracle_lambda);
            let mut comp = 0.0;
            let mut fair = 0.0;
            for c in 0..tree.k() {
                let idx: Vec<usize> = (0..ds.n()).filter(|&i| assign[i] == c).collect();
                assert!(!idx.is_empty());
                comp += p.compactness(&ds, &idx);
                fair += p.fairness(&ds, &idx);
            }
            assert!(
                close(comp, tree.total_compactness(), 1e-9),
                "seed {seed}: {comp} vs {}",
                tree.total_compactness()
            );
            assert!(
                close(fair, tree.total_fairness(), 1e-9),
                "seed {seed}: {fair} vs {}",
                tree.total_fairness()
            );
        }
    }
    assert!(fitted >= 100, "only {fitted} trees fitted");
}

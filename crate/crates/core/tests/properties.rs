use factorlab::evaluation::{log_softmax, performance};
use factorlab::gp::{eval_tree, eval_tree_recursive, random_tree, ExprTree};
use factorlab::ic::exact_spearman;
use factorlab::market::{generate_synthetic_market, AlphaSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spearman_is_bounded_and_symmetric(xs in prop::collection::vec(-1e3f64..1e3, 3..40), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ys: Vec<f64> = xs.iter().map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        if let (Ok(a), Ok(b)) = (exact_spearman(&xs, &ys), exact_spearman(&ys, &xs)) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn spearman_ignores_monotone_transforms(xs in prop::collection::vec(-5f64..5.0, 3..30), ys in prop::collection::vec(-5f64..5.0, 30)) {
        let ys = &ys[..xs.len()];
        let cubed: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0 * x).collect();
        if let (Ok(a), Ok(b)) = (exact_spearman(&xs, ys), exact_spearman(&cubed, ys)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_normalizes(xs in prop::collection::vec(-50f64..50.0, 1..20)) {
        let total: f64 = log_softmax(&xs).iter().map(|l| l.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn drawdown_is_a_fraction(rs in prop::collection::vec(-0.5f64..0.5, 1..60)) {
        let p = performance(&rs, 50.0);
        prop_assert!((0.0..=1.0).contains(&p.max_drawdown));
    }

    #[test]
    fn tree_text_round_trips_and_evaluates_consistently(seed in any::<u64>(), depth in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = random_tree(&mut rng, depth, seed % 2 == 0);
        let back: ExprTree = tree.to_string().parse().unwrap();
        prop_assert_eq!(&back, &tree);
        let panel = generate_synthetic_market(4, 25, seed % 7, &AlphaSpec::default()).unwrap().panel;
        let a = eval_tree(&tree, &panel).unwrap();
        let b = eval_tree_recursive(&tree, &panel).unwrap();
        for d in 0..a.n_days() {
            for s in 0..a.n_symbols() {
                prop_assert_eq!(a.get(d, s).map(f64::to_bits), b.get(d, s).map(f64::to_bits));
            }
        }
    }
}

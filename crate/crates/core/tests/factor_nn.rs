use factorlab::autodiff::{build_dense, Activation};
use factorlab::factor_nn::*;
use factorlab::indicators::IndicatorSpec;
use factorlab::market::{generate_synthetic_market, make_batches, AlphaSpec, SplitKind, SplitSpec};

#[test]
fn prune_removes_smallest_weights_and_masks_stay_zero_after_training() {
    let market = generate_synthetic_market(20, 120, 3, &AlphaSpec::default()).unwrap();
    let split = SplitSpec::new(70, 25, 25).unwrap();
    let batches = make_batches(&market.panel, split, 10, 2).unwrap();
    let net = build_dense(&[16, 16], Activation::Tanh, 10, 1).unwrap();
    let pruned = prune(&net, 0.3).unwrap();
    for (p, q) in net.params().iter().zip(pruned.params()) {
        if !p.is_weight {
            assert!(q.mask.is_none());
            continue;
        }
        let mask = q.mask.as_ref().unwrap();
        let zeros = mask.data().iter().filter(|&&m| m == 0.0).count();
        assert_eq!(zeros, (0.3 * p.value.len() as f64).floor() as usize);
        let kept_min = p.value.data().iter().zip(mask.data()).filter(|(_, m)| **m == 1.0).map(|(w, _)| w.abs()).fold(f64::INFINITY, f64::min);
        let cut_max = p.value.data().iter().zip(mask.data()).filter(|(_, m)| **m == 0.0).map(|(w, _)| w.abs()).fold(0.0, f64::max);
        assert!(cut_max <= kept_min);
    }
    let cand = FactorCandidate::new("p", pruned, CandidateSeed::Random);
    let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
    let trained = train_factor(&cand, &batches, &cfg).unwrap();
    for p in trained.net.params() {
        if let Some(mask) = &p.mask {
            let eff = p.effective();
            for (e, m) in eff.data().iter().zip(mask.data()) {
                if *m == 0.0 {
                    assert_eq!(*e, 0.0);
                }
            }
        }
    }
}

#[test]
fn pretraining_reduces_error_on_a_smooth_target() {
    let market = generate_synthetic_market(20, 140, 4, &AlphaSpec::default()).unwrap();
    let split = SplitSpec::new(90, 25, 25).unwrap();
    let batches = make_batches(&market.panel, split, 10, 2).unwrap();
    let target = PretrainTarget::indicator(&IndicatorSpec::Ma { n: 5 }, &market.panel).unwrap();
    let net = build_dense(&[16, 16], Activation::Tanh, 10, 2).unwrap();
    let cfg = PretrainConfig { epochs: 30, ..PretrainConfig::default() };
    let (fitted, report) = pretrain(&net, &target, &market.panel, &batches, &cfg).unwrap();
    let first = report.loss_history[0];
    let last = *report.loss_history.last().unwrap();
    assert!(last < first, "{first} -> {last}");
    assert_eq!(fitted.lookback(), 10);
}

#[test]
fn candidate_round_trips_through_disk() {
    let market = generate_synthetic_market(15, 100, 6, &AlphaSpec::default()).unwrap();
    let split = SplitSpec::new(60, 20, 20).unwrap();
    let batches = make_batches(&market.panel, split, 8, 2).unwrap();
    let net = prune(&build_dense(&[12, 12], Activation::Relu, 8, 3).unwrap(), 0.3).unwrap();
    let cand = FactorCandidate::new("rt", net, CandidateSeed::Random);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
    let cand = train_factor(&cand, &batches, &cfg).unwrap();
    assert!(cand.history[0].loss.is_nan());
    save_candidate(&cand, dir.path(), "abc").unwrap();
    let (back, hash) = load_candidate(dir.path()).unwrap();
    assert_eq!(hash, "abc");
    assert_eq!(back.history.len(), cand.history.len());
    assert_eq!(back.best_valid_ic.to_bits(), cand.best_valid_ic.to_bits());
    let (fresh, _) = {
        let d = tempfile::tempdir().unwrap();
        let f = FactorCandidate::new("fresh", cand.net.clone(), CandidateSeed::Random);
        save_candidate(&f, d.path(), "x").unwrap();
        load_candidate(d.path()).unwrap()
    };
    assert!(fresh.best_valid_ic.is_nan());
    let test = batches.get(SplitKind::Test);
    for b in test {
        let x = cand.net.predict(&b.tensor).unwrap();
        let y = back.net.predict(&b.tensor).unwrap();
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() <= 1e-9);
        }
    }
    let ea = evaluate_factor(&cand.net, test, &market.panel).unwrap();
    let eb = evaluate_factor(&back.net, test, &market.panel).unwrap();
    assert_eq!(ea.mean_ic.to_bits(), eb.mean_ic.to_bits());
}

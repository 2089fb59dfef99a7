//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach the output.

mod common;

use std::time::Instant;

use common::{best_two_partition, canonical, coordinate_ascent, max_ic_grad_error, random_batch, rel_err};
use factorlab::autodiff::{build_conv, build_dense, build_recurrent, sgd_step, Activation, ConvSpec, NetworkGraph};
use factorlab::evaluation::{
    backtest, cross_entropy, diversity_score, ic_stats, optimal_combination, performance, BacktestConfig, CrossSection,
    FactorSet,
};
use factorlab::factor_nn::{pretrain, prune, CandidateSeed, PretrainConfig, PretrainTarget};
use factorlab::gp::{eval_tree, evolve, GpConfig};
use factorlab::ic::{diff_ic, exact_spearman, ic_loss, KernelParams};
use factorlab::indicators::IndicatorSpec;
use factorlab::market::{
    business_days, forward_return, generate_synthetic_market, make_batches, AlphaSpec, FactorMatrix, SplitKind, SplitSpec,
    WindowBatch,
};
use factorlab::pipeline::{build_candidate, run_pipeline, CandidatePlan, ExperimentConfig, Scheme};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c1_gradients() -> Outcome {
    let kernel = KernelParams::default();
    let m = 4;
    let mut worst = [0.0f64; 3];
    for seed in 0..20u64 {
        let batches: Vec<WindowBatch> = (0..2).map(|d| random_batch(8, m, d, seed * 31 + d as u64)).collect();
        let nets: [NetworkGraph; 3] = [
            build_dense(&[6, 5, 4], Activation::Tanh, m, seed).unwrap(),
            build_recurrent(4, m, seed).unwrap(),
            build_conv(
                &ConvSpec {
                    kernel_width: 3,
                    n_layers: 2,
                    channels: 3,
                    head_width: 4,
                    activation: Activation::Tanh,
                },
                m,
                seed,
            )
            .unwrap(),
        ];
        for (i, net) in nets.iter().enumerate() {
            worst[i] = worst[i].max(max_ic_grad_error(net, &batches, &kernel, 1e-5));
        }
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    outcome(
        max <= 1e-3,
        format!("max rel err fcn {:.2e}, lstm {:.2e}, conv {:.2e} (20 seeds each)", worst[0], worst[1], worst[2]),
    )
}

fn c2_surrogate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = KernelParams::default();
    let mut total = 0.0;
    for _ in 0..1000 {
        let rho: f64 = rng.random_range(-0.9..0.9);
        let (mut x, mut y) = (Vec::with_capacity(200), Vec::with_capacity(200));
        for _ in 0..200 {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            x.push(a);
            y.push(rho * a + (1.0 - rho * rho).sqrt() * b);
        }
        total += (diff_ic(&x, &y, &params).unwrap() - exact_spearman(&x, &y).unwrap()).abs();
    }
    let mean = total / 1000.0;
    outcome(mean <= 0.05, format!("mean |diff_ic - spearman| = {mean:.4} over 1000 pairs, n=200"))
}

fn c3_pretrain() -> Outcome {
    let market = generate_synthetic_market(200, 600, 3, &AlphaSpec::default()).unwrap();
    let split = SplitSpec::fill(600, 250, 50).unwrap();
    let batches = make_batches(&market.panel, split, 30, 5).unwrap();
    let spec = IndicatorSpec::Ma { n: 10 };
    let target = PretrainTarget::indicator(&spec, &market.panel).unwrap();
    let net = build_dense(&[64, 64, 64], Activation::Relu, 30, 3).unwrap();
    let cfg = PretrainConfig {
        epochs: 20,
        seed: 3,
        ..PretrainConfig::default()
    };
    let (_, report) = pretrain(&net, &target, &market.panel, &batches, &cfg).unwrap();
    let acc = report.test.decision_accuracy.unwrap_or(0.0);
    let ratio = report.test.mse / report.train.mse;
    outcome(
        acc >= 0.85 && ratio <= 3.0,
        format!(
            "MA(10) test decision accuracy {:.4}, test/train MSE {:.3e}/{:.3e} = {ratio:.2}",
            acc, report.test.mse, report.train.mse
        ),
    )
}

fn nnafc_test_ic(n_symbols: usize, target: f64, seed: u64) -> f64 {
    let n_days = 500;
    let market = generate_synthetic_market(n_symbols, n_days, seed, &AlphaSpec::with_target(target)).unwrap();
    let split = SplitSpec::fill(n_days, 250, 50).unwrap();
    let batches = make_batches(&market.panel, split, 30, 5).unwrap();
    let cfg = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    let spec = IndicatorSpec::Ma { n: 10 };
    let plan = CandidatePlan {
        name: "nn-ma-10".into(),
        target: Some(PretrainTarget::indicator(&spec, &market.panel).unwrap()),
        seed: CandidateSeed::Indicator { spec },
    };
    let trained = build_candidate(&plan, 0, &cfg, &market.panel, &batches).unwrap();
    factorlab::factor_nn::mean_exact_ic(&trained.candidate.net, &batches.test).unwrap()
}

fn c4_planted() -> Outcome {
    let planted = nnafc_test_ic(200, 0.3, 4);
    let noise = nnafc_test_ic(400, 0.0, 5);
    outcome(
        planted >= 0.05 && noise.abs() < 0.03,
        format!("planted test IC {planted:.4} (>= 0.05), zero-signal test IC {noise:.4} (|.| < 0.03)"),
    )
}

fn c5_gp() -> Outcome {
    let market = generate_synthetic_market(100, 400, 6, &AlphaSpec::default()).unwrap();
    let split = SplitSpec::fill(400, 250, 50).unwrap();
    let cfg = GpConfig {
        seed: 6,
        ..GpConfig::default()
    };
    let run = evolve(None, &market.panel, &split, &cfg).unwrap();
    let best = &run.best[0];
    let f = eval_tree(&best.tree, &market.panel).unwrap();
    let test_ic = ic_stats(&f, &market.panel, split.range(SplitKind::Test), 5).unwrap().mean;
    let steps = run.trace.windows(2).count();
    let monotone = run.trace.windows(2).filter(|w| w[1].best_fitness >= w[0].best_fitness).count();
    outcome(
        test_ic >= 0.05 && monotone == steps && run.trace.len() == 31,
        format!("best {} test IC {test_ic:.4}; best fitness non-decreasing in {monotone}/{steps} generations", best.tree),
    )
}

fn c6_combination() -> Outcome {
    let mut worst = 0.0f64;
    // identity covariance, 2 to 4 factors: v = IC / lambda
    for (ic, lambda) in [(vec![0.1, 0.2], 1.0), (vec![0.05, -0.02, 0.07], 2.0), (vec![0.1, 0.0, 0.03, 0.04], 0.5)] {
        let k = ic.len();
        let cov: Vec<f64> = (0..k * k).map(|i| if i % (k + 1) == 0 { 1.0 } else { 0.0 }).collect();
        let c = optimal_combination(&FactorSet::from_moments(ic.clone(), cov).unwrap(), lambda).unwrap();
        for (v, a) in c.weights.iter().zip(&ic) {
            worst = worst.max((v - a / lambda).abs());
        }
        worst = worst.max((c.ic_star - ic.iter().map(|a| a * a).sum::<f64>() / lambda).abs());
    }
    // rank-deficient covariance takes the ridge path: compare with the 2x2 closed form of S + eps I
    let (a, b) = (0.1, 0.04);
    let s = [0.04, 0.02, 0.02, 0.01];
    let c = optimal_combination(&FactorSet::from_moments(vec![a, b], s.to_vec()).unwrap(), 1.0).unwrap();
    let eps = c.ridge.unwrap_or(f64::NAN);
    let expected_eps = 1e-6 * (s[0] + s[3]) / 2.0;
    let (p, q, r) = (s[0] + eps, s[1], s[3] + eps);
    let det = p * r - q * q;
    let v = [(r * a - q * b) / det, (p * b - q * a) / det];
    let ridge_err = ((eps - expected_eps).abs())
        .max(rel_err(c.weights[0], v[0]))
        .max(rel_err(c.weights[1], v[1]))
        .max(rel_err(c.ic_star, v[0] * a + v[1] * b));
    worst = worst.max(ridge_err);
    // monotonicity against the coordinate-ascent oracle
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut oracle_err = 0.0f64;
    let mut violations = 0;
    for _ in 0..20 {
        let k = 5;
        let a_mat: Vec<f64> = (0..k * k).map(|_| rng.sample(StandardNormal)).collect();
        let mut cov = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                cov[i * k + j] = (0..k).map(|t| a_mat[t * k + i] * a_mat[t * k + j]).sum::<f64>() / k as f64 * 0.01
                    + if i == j { 0.002 } else { 0.0 };
            }
        }
        let ic: Vec<f64> = (0..k).map(|_| rng.random_range(-0.1..0.1)).collect();
        let full = FactorSet::from_moments(ic.clone(), cov.clone()).unwrap();
        let big = optimal_combination(&full, 1.0).unwrap();
        let (_, oracle_big) = coordinate_ascent(&ic, &cov, 1.0);
        oracle_err = oracle_err.max(rel_err(big.ic_star, oracle_big));
        for drop in 0..k {
            let keep: Vec<usize> = (0..k).filter(|&i| i != drop).collect();
            let sub = full.subset(&keep);
            let small = optimal_combination(&sub, 1.0).unwrap();
            let (_, oracle_small) = coordinate_ascent(&sub.ic_vector, &sub.ic_cov, 1.0);
            oracle_err = oracle_err.max(rel_err(small.ic_star, oracle_small));
            if big.ic_star < small.ic_star - 1e-12 {
                violations += 1;
            }
        }
    }
    outcome(
        worst <= 1e-9 && oracle_err <= 1e-9 && violations == 0,
        format!("closed-form max err {worst:.2e}; oracle max rel err {oracle_err:.2e}; IC* decreases {violations}/100"),
    )
}

fn c7_diversity() -> Outcome {
    let h = cross_entropy(&[0.3; 4], &[0.3; 4]);
    let entropy_err = (h - 4f64.ln()).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut matches = 0;
    for _ in 0..50 {
        let (n_days, n_syms) = (3, 8);
        let factors: Vec<FactorMatrix> = (0..6)
            .map(|_| {
                let vals = (0..n_days * n_syms).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                FactorMatrix::from_values(business_days(n_days), (0..n_syms).map(|s| format!("S{s}")).collect(), vals).unwrap()
            })
            .collect();
        let d = diversity_score(&factors, 0..n_days, 2, CrossSection::Raw, 7).unwrap();
        let rows: Vec<Vec<f64>> = d.symmetric.chunks(6).map(<[f64]>::to_vec).collect();
        let (brute, _) = best_two_partition(&rows);
        if canonical(&d.assignment) == canonical(&brute) {
            matches += 1;
        }
    }
    outcome(
        entropy_err <= 1e-12 && matches == 50,
        format!("|D(f,f) - ln 4| = {entropy_err:.1e}; k-means equals exhaustive search on {matches}/50 instances"),
    )
}

fn c8_pruning() -> Outcome {
    let m = 6;
    let net = build_dense(&[16, 12, 8], Activation::Tanh, m, 8).unwrap();
    let mut pruned = prune(&net, 0.3).unwrap();
    let mut counts_ok = true;
    for p in pruned.params().iter().filter(|p| p.is_weight) {
        let zeros = p.mask.as_ref().map_or(0, |mk| mk.data().iter().filter(|&&v| v == 0.0).count());
        counts_ok &= zeros == (0.3 * p.value.len() as f64).floor() as usize;
    }
    let masked_before: Vec<Vec<f64>> = pruned.params().iter().map(|p| p.value.data().to_vec()).collect();
    let batches: Vec<WindowBatch> = (0..4).map(|d| random_batch(10, m, d, 80 + d as u64)).collect();
    let kernel = KernelParams::default();
    for step in 0..200 {
        let refs = [&batches[step % 4]];
        let g = ic_loss(&refs, &pruned, &kernel).unwrap().grads;
        sgd_step(&mut pruned, &g, 0.05, Some(5.0)).unwrap();
    }
    let mut frozen = true;
    for (p, before) in pruned.params().iter().zip(&masked_before) {
        if let Some(mk) = &p.mask {
            for ((v, b), keep) in p.value.data().iter().zip(before).zip(mk.data()) {
                frozen &= *keep != 0.0 || v == b;
            }
            frozen &= p.effective().data().iter().zip(mk.data()).all(|(e, k)| *k != 0.0 || *e == 0.0);
        }
    }
    // scrambling masked raw values must not change the output
    let mut scrambled = pruned.clone();
    for p in scrambled.params_mut() {
        if let Some(mk) = p.mask.clone() {
            for (v, k) in p.value.data_mut().iter_mut().zip(mk.data()) {
                if *k == 0.0 {
                    *v = 1e3;
                }
            }
        }
    }
    let x = &batches[0].tensor;
    let silent = pruned.predict(x).unwrap() == scrambled.predict(x).unwrap();
    outcome(
        counts_ok && frozen && silent,
        format!("floor(0.3|W|) masked per tensor: {counts_ok}; unchanged over 200 steps: {frozen}; no forward contribution: {silent}"),
    )
}

fn c9_backtest() -> Outcome {
    let market = generate_synthetic_market(50, 200, 9, &AlphaSpec::with_target(0.0)).unwrap();
    let p = &market.panel;
    let mut oracle = FactorMatrix::empty_like(p);
    for d in 0..p.n_days() - 5 {
        for (s, r) in forward_return(p, d, 5).unwrap().into_iter().enumerate() {
            if let Some(r) = r {
                oracle.set(d, s, r);
            }
        }
    }
    let free = BacktestConfig {
        commission: 0.0,
        ..BacktestConfig::default()
    };
    let bt0 = backtest(&oracle, p, 0..200, &free).unwrap();
    let all_positive = !bt0.periods.is_empty() && bt0.periods.iter().all(|q| q.net_return > 0.0);

    let hand = performance(&[0.01, -0.02, 0.01], 252.0);
    let hand_err = (hand.max_drawdown - 0.02).abs().max(hand.sharpe.abs());
    let hand2 = performance(&[0.02, -0.01, 0.02], 252.0);
    let sd = ((2.0 * 0.01f64.powi(2) + 0.02f64.powi(2)) / 2.0).sqrt();
    let hand_err = hand_err
        .max((hand2.sharpe - 0.01 / sd * 252f64.sqrt()).abs())
        .max((hand2.max_drawdown - 0.01).abs());

    let bt = backtest(&oracle, p, 0..200, &BacktestConfig::default()).unwrap();
    let mut equity = bt.initial_equity;
    let mut charge_err = 0.0f64;
    for q in &bt.periods {
        charge_err = charge_err.max((q.commission_paid - 0.003 * q.turnover * q.equity_before).abs());
        equity = equity * (1.0 + q.gross_return) - q.commission_paid;
    }
    let replay_err = (equity - bt.final_equity()).abs();
    let free_equity: f64 = bt0.periods.iter().map(|q| 1.0 + q.gross_return).product();
    let gap = free_equity - bt.final_equity();
    outcome(
        all_positive && hand_err <= 1e-12 && replay_err <= 1e-12 && charge_err <= 1e-15 && gap > 0.0,
        format!(
            "clairvoyant positive in {}/{} periods; hand case err {hand_err:.1e}; commission replay err {replay_err:.1e}, total charges {:.5}",
            bt0.periods.iter().filter(|q| q.net_return > 0.0).count(),
            bt0.periods.len(),
            bt.total_commission
        ),
    )
}

fn c10_reproducible() -> Outcome {
    let text = r#"
scheme = "combine"
seed = 10
indicators = ["ma:10", "rsi:14"]
[data]
source = "synthetic"
n_symbols = 30
n_days = 340
[network]
width = 8
[pretrain]
epochs = 3
[train]
epochs = 4
[gp]
population = 30
generations = 3
top_k = 3
[eval]
combine_top = 3
"#;
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    assert_eq!(cfg.scheme, Scheme::Combine);
    let dir = tempfile::tempdir().unwrap();
    let a = run_pipeline(&cfg, dir.path().join("a")).unwrap();
    let b = run_pipeline(&cfg, dir.path().join("b")).unwrap();
    let same_files = a.manifest.artifacts.iter().all(|(k, _)| {
        std::fs::read(a.dir.join(k)).unwrap() == std::fs::read(b.dir.join(k)).unwrap()
    });
    outcome(
        a.manifest == b.manifest && same_files,
        format!("{} artifacts hashed; manifests identical: {}", a.manifest.artifacts.len(), a.manifest == b.manifest),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", c1_gradients),
        ("surrogate fidelity", c2_surrogate),
        ("pre-training fidelity", c3_pretrain),
        ("planted-alpha recovery", c4_planted),
        ("GP sanity", c5_gp),
        ("combination math", c6_combination),
        ("diversity metric", c7_diversity),
        ("pruning contract", c8_pruning),
        ("backtest accounting", c9_backtest),
        ("reproducibility", c10_reproducible),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<24} {}  {}  [{:.1}s]",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Trains a randomly initialized network directly on the differentiable IC
//! objective and reports out-of-sample rank correlation.

use factorlab::autodiff::{build_fcn, Activation};
use factorlab::factor_nn::{evaluate_factor, train_factor, CandidateSeed, FactorCandidate, TrainConfig};
use factorlab::market::{generate_synthetic_market, make_batches, AlphaSpec, SplitKind, SplitSpec};

fn main() -> factorlab::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let panel = generate_synthetic_market(150, 450, 4, &AlphaSpec::with_target(0.3))?.panel;
    let batches = make_batches(&panel, SplitSpec::fill(450, 250, 50)?, 30, 5)?;
    let net = build_fcn(3, 64, Activation::Relu, 30, 5)?;
    let cand = FactorCandidate::new("fcn", net, CandidateSeed::Random);
    let cfg = TrainConfig { epochs: 20, ..TrainConfig::default() };
    let trained = train_factor(&cand, &batches, &cfg)?;
    for r in &trained.history {
        println!("epoch {:>3}  train IC {:>7.4}  valid IC {:>7.4}", r.epoch, r.train_ic, r.valid_ic);
    }
    println!("best epoch {} (valid IC {:.4})", trained.best_epoch, trained.best_valid_ic);
    let eval = evaluate_factor(&trained.net, batches.get(SplitKind::Test), &panel)?;
    println!("test mean IC {:.4} over {} days", eval.mean_ic, eval.daily_ic.len());
    Ok(())
}

//! Pre-trains a network to imitate MA(10), then prunes 30% of each weight tensor.

use factorlab::autodiff::{build_fcn, Activation};
use factorlab::factor_nn::{pretrain, prune, PretrainConfig, PretrainTarget};
use factorlab::indicators::IndicatorSpec;
use factorlab::market::{generate_synthetic_market, make_batches, AlphaSpec, SplitSpec};

fn main() -> factorlab::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let panel = generate_synthetic_market(60, 300, 3, &AlphaSpec::default())?.panel;
    let batches = make_batches(&panel, SplitSpec::new(200, 50, 50)?, 30, 5)?;
    let target = PretrainTarget::indicator(&IndicatorSpec::Ma { n: 10 }, &panel)?;
    let net = build_fcn(3, 64, Activation::Relu, 30, 11)?;
    let cfg = PretrainConfig { epochs: 15, ..PretrainConfig::default() };
    let (fitted, report) = pretrain(&net, &target, &panel, &batches, &cfg)?;
    println!("epochs {}  loss {:.4} -> {:.4}", report.epochs_run, report.loss_history[0], report.loss_history.last().unwrap());
    for (name, fit) in [("train", &report.train), ("valid", &report.valid), ("test", &report.test)] {
        println!(
            "{name:<5} mse {:.5}  error rate {:.4}  decision accuracy {:.4}",
            fit.mse,
            fit.error_rate,
            fit.decision_accuracy.unwrap_or(f64::NAN)
        );
    }
    let pruned = prune(&fitted, 0.3)?;
    for (i, p) in pruned.params().iter().enumerate().filter(|(_, p)| p.is_weight) {
        let masked = p.mask.as_ref().map_or(0, |m| m.data().iter().filter(|&&v| v == 0.0).count());
        println!("weight tensor {i}: {masked}/{} masked", p.value.len());
    }
    Ok(())
}

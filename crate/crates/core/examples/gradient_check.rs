//! Compares reverse-mode gradients of the differentiable IC loss against
//! central finite differences for the three network families.

use factorlab::autodiff::{build_conv, build_dense, build_recurrent, Activation, ConvSpec, NetworkGraph};
use factorlab::ic::{ic_loss, KernelParams};
use factorlab::market::{generate_synthetic_market, make_batches, AlphaSpec, SplitKind, SplitSpec, WindowBatch};

fn loss(net: &NetworkGraph, days: &[&WindowBatch], k: &KernelParams) -> f64 {
    ic_loss(days, net, k).unwrap().loss
}

fn check(name: &str, net: &NetworkGraph, days: &[&WindowBatch]) {
    let k = KernelParams::default();
    let grads = ic_loss(days, net, &k).unwrap().grads;
    let h = 1e-5;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (pi, g) in grads.params.iter().enumerate() {
        // every 7th entry keeps the example fast
        for i in (0..g.len()).step_by(7) {
            let w = probe.params()[pi].value.data()[i];
            probe.params_mut()[pi].value.data_mut()[i] = w + h;
            let up = loss(&probe, days, &k);
            probe.params_mut()[pi].value.data_mut()[i] = w - h;
            let down = loss(&probe, days, &k);
            probe.params_mut()[pi].value.data_mut()[i] = w;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((g.data()[i] - fd).abs() / g.data()[i].abs().max(fd.abs()).max(1e-6));
        }
    }
    println!("{name:<6} {:>6} weights  max rel err {worst:.2e}", net.n_weights());
}

fn main() -> factorlab::Result<()> {
    let m = 6;
    let panel = generate_synthetic_market(12, 80, 2, &AlphaSpec::default())?.panel;
    let batches = make_batches(&panel, SplitSpec::new(50, 15, 15)?, m, 2)?;
    let days: Vec<&WindowBatch> = batches.get(SplitKind::Train).iter().take(2).collect();
    check("dense", &build_dense(&[16, 8], Activation::Tanh, m, 1)?, &days);
    check("lstm", &build_recurrent(6, m, 2)?, &days);
    check("conv", &build_conv(&ConvSpec { n_layers: 1, channels: 4, head_width: 4, ..ConvSpec::default() }, m, 3)?, &days);
    Ok(())
}

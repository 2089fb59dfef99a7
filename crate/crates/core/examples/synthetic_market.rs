//! Generates a synthetic panel with a planted volume signal and checks how
//! well the hidden factor predicts forward returns.

use factorlab::evaluation::ic_stats;
use factorlab::market::{generate_synthetic_market, AlphaSpec};

fn main() -> factorlab::Result<()> {
    let spec = AlphaSpec::with_target(0.2);
    let market = generate_synthetic_market(80, 300, 7, &spec)?;
    let panel = &market.panel;
    println!(
        "{} symbols x {} days, {} .. {}",
        panel.n_symbols(),
        panel.n_days(),
        panel.dates()[0],
        panel.dates()[panel.n_days() - 1]
    );
    println!("hidden factor {}; mixing weight {:.4}", spec.expression(), market.mixing);
    let stats = ic_stats(&market.hidden, panel, 0..panel.n_days(), spec.horizon)?;
    println!("realized mean IC {:.4} (target {}), IR {:.2}", stats.mean, spec.target_spearman, stats.ir);
    let path = std::env::temp_dir().join("factorlab_synthetic.csv");
    panel.write_csv(&path)?;
    println!("panel written to {}", path.display());
    Ok(())
}

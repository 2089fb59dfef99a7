//! Runs every scheme on the same small synthetic panel and prints the comparison table.

use factorlab::pipeline::{compare_schemes, ExperimentConfig, Scheme};

const BASE: &str = r#"
seed = 1
indicators = ["ma:10", "macd:12:26", "rsi:14"]
[data]
source = "synthetic"
n_symbols = 40
n_days = 340
[network]
width = 64
[pretrain]
epochs = 5
[train]
epochs = 8
[gp]
population = 40
generations = 5
"#;

fn main() -> factorlab::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let base = ExperimentConfig::from_toml(BASE)?;
    let configs: Vec<ExperimentConfig> = Scheme::ALL
        .iter()
        .map(|&scheme| ExperimentConfig { scheme, ..base.clone() })
        .collect();
    let root = std::env::temp_dir().join("factorlab_compare");
    let table = compare_schemes(&configs, &root)?;
    println!("{}", table.to_text());
    println!("runs under {}", root.display());
    Ok(())
}

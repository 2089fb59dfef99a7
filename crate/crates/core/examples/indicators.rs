//! Computes the prior-knowledge indicator pool and its buy/no-buy decisions.

use factorlab::indicators::{compute_indicator, indicator_to_decision, DecisionRule, IndicatorSpec};
use factorlab::market::{generate_synthetic_market, AlphaSpec};

fn main() -> factorlab::Result<()> {
    let panel = generate_synthetic_market(20, 120, 1, &AlphaSpec::default())?.panel;
    let day = panel.n_days() - 1;
    println!("{:<12} {:>8} {:>12} {:>10}", "indicator", "warmup", "value[s0]", "buy share");
    for spec in IndicatorSpec::prior_knowledge_pool() {
        let values = compute_indicator(&spec, &panel)?;
        let decisions = indicator_to_decision(spec.kind(), &values, DecisionRule::default_for(spec.kind()), &panel)?;
        let row = decisions.row(day);
        let buys = row.iter().filter(|(_, v)| *v == 1.0).count();
        println!(
            "{:<12} {:>8} {:>12.4} {:>10.2}",
            spec.to_string(),
            spec.warmup(),
            values.get(day, 0).unwrap_or(f64::NAN),
            buys as f64 / row.len().max(1) as f64
        );
    }
    Ok(())
}

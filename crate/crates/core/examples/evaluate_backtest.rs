//! Scores indicator factors by IC, combines them with IC-optimal weights,
//! measures diversity, and backtests the combination with commissions.

use factorlab::evaluation::{
    backtest, combine_factors, diversity_score, ic_stats, optimal_combination, BacktestConfig, CrossSection, FactorSet,
};
use factorlab::indicators::{compute_indicator, IndicatorSpec};
use factorlab::market::{generate_synthetic_market, AlphaSpec, SplitKind, SplitSpec};

fn main() -> factorlab::Result<()> {
    let market = generate_synthetic_market(100, 400, 8, &AlphaSpec::default())?;
    let panel = &market.panel;
    let split = SplitSpec::new(250, 70, 80)?;
    let horizon = 5;
    let mut names = vec!["hidden".to_string()];
    let mut factors = vec![market.hidden.clone()];
    for spec in IndicatorSpec::prior_knowledge_pool() {
        names.push(spec.to_string());
        factors.push(compute_indicator(&spec, panel)?);
    }
    let test = split.range(SplitKind::Test);
    for (n, f) in names.iter().zip(&factors) {
        let s = ic_stats(f, panel, test.clone(), horizon)?;
        println!("{n:<12} test IC {:>7.4}  IR {:>6.2}", s.mean, s.ir);
    }
    let fs = FactorSet::build(names.clone(), factors.clone(), panel, split.range(SplitKind::Valid), horizon)?;
    let comb = optimal_combination(&fs, 1.0)?;
    println!("weights {:?}", comb.weights.iter().map(|w| format!("{w:.2}")).collect::<Vec<_>>());
    let div = diversity_score(&factors, test.clone(), 3, CrossSection::ZScore, 0)?;
    println!("diversity {:.4}, clusters {:?}", div.score, div.assignment);
    let combined = combine_factors(&factors, &comb.weights)?;
    let report = backtest(&combined, panel, test, &BacktestConfig::default())?;
    let p = &report.performance;
    println!(
        "backtest: {} periods, annualized {:.2}%, max drawdown {:.2}%, sharpe {:.2}, commissions {:.4}",
        report.periods.len(),
        100.0 * p.annualized_return,
        100.0 * p.max_drawdown,
        p.sharpe,
        report.total_commission
    );
    Ok(())
}

//! Evolves expression-tree factors and prints the best one per generation.

use factorlab::gp::{evolve, GpConfig};
use factorlab::market::{generate_synthetic_market, AlphaSpec, SplitSpec};

fn main() -> factorlab::Result<()> {
    let spec = AlphaSpec::with_target(0.3);
    let panel = generate_synthetic_market(50, 300, 6, &spec)?.panel;
    let split = SplitSpec::new(200, 50, 50)?;
    let cfg = GpConfig { population: 100, generations: 10, seed: 1, ..GpConfig::default() };
    let run = evolve(None, &panel, &split, &cfg)?;
    for g in &run.trace {
        println!("gen {:>2}  best {:.4}  mean {:.4}  {}", g.generation, g.best_fitness, g.mean_fitness, g.best_expr);
    }
    println!("planted: {}", spec.expression());
    for m in &run.best {
        println!("{:.4}  {}", m.fitness, m.tree);
    }
    Ok(())
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use factorlab::evaluation::{backtest, diversity_score, ic_stats, write_distance_csv, EvalReport};
use factorlab::factor_nn::{load_candidate, pretrain, prune, save_candidate, train_factor, CandidateSeed, FactorCandidate, PretrainTarget, Provenance};
use factorlab::gp::{eval_tree, evolve};
use factorlab::indicators::{compute_indicator, IndicatorSpec};
use factorlab::market::{make_batches, FactorMatrix, PricePanel, SplitKind};
use factorlab::pipeline::{
    build_candidate, compare_runs, load_data, run_pipeline, sha256_hex, CandidatePlan, ExperimentConfig, Scheme,
};
use factorlab::{Error, Result};

#[derive(Parser)]
#[command(name = "factorlab", version, about = "Alpha factor construction and evaluation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Panel CSV to use instead of the config's data source.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic market (panel.csv, hidden.csv).
    GenData,
    /// Compute indicators into factor CSVs.
    Indicators {
        /// Indicator specs such as `ma:10`; defaults to the config pool.
        #[arg(long = "spec")]
        specs: Vec<String>,
    },
    /// Pretrain a network on one indicator and prune it.
    Pretrain {
        #[arg(long)]
        indicator: String,
    },
    /// IC-train a network, from a pretrained bundle or from scratch.
    Train {
        /// Candidate bundle written by `pretrain`.
        #[arg(long)]
        candidate: Option<PathBuf>,
        /// Pretraining indicator when no bundle is given; omit for random init.
        #[arg(long)]
        indicator: Option<String>,
    },
    /// Evolve expression trees.
    Gp,
    /// IC statistics and diversity of factor CSVs over a split.
    Evaluate {
        #[arg(required = true)]
        factors: Vec<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Quantile backtest of a factor CSV over a split.
    Backtest {
        factor: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Tabulate finished run directories.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Run the configured scheme end to end.
    Run {
        /// Overrides the config scheme.
        #[arg(long)]
        scheme: Option<String>,
    },
}

fn config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = &common.data {
        cfg.data = factorlab::pipeline::DataSource::Csv { path: d.clone() };
    }
    cfg.validate()?;
    Ok(cfg.resolved())
}

fn panel(cfg: &ExperimentConfig) -> Result<PricePanel> {
    Ok(load_data(cfg).map_err(|e| e.in_stage("data"))?.panel)
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn split_kind(s: &str) -> Result<SplitKind> {
    match s {
        "train" => Ok(SplitKind::Train),
        "valid" => Ok(SplitKind::Valid),
        "test" => Ok(SplitKind::Test),
        other => Err(Error::Config(format!("unknown split `{other}`"))),
    }
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "factor".into(), |s| s.to_string_lossy().into_owned())
}

fn run(cli: Cli) -> Result<()> {
    let out = &cli.common.out;
    match cli.command {
        Command::GenData => {
            let cfg = config(&cli.common)?;
            let data = load_data(&cfg).map_err(|e| e.in_stage("data"))?;
            mkdir(out)?;
            data.panel.write_csv(out.join("panel.csv"))?;
            if let Some(h) = &data.hidden {
                h.write_csv(out.join("hidden.csv"))?;
            }
            let bytes = std::fs::read(out.join("panel.csv")).map_err(|e| Error::io(out, e))?;
            println!("{} symbols x {} days, data hash {}", data.panel.n_symbols(), data.panel.n_days(), sha256_hex(&bytes));
        }
        Command::Indicators { specs } => {
            let cfg = config(&cli.common)?;
            let p = panel(&cfg)?;
            let specs: Vec<IndicatorSpec> = if specs.is_empty() {
                cfg.indicator_specs()?
            } else {
                specs.iter().map(|s| s.parse()).collect::<Result<_>>()?
            };
            mkdir(out)?;
            for spec in specs {
                let f = compute_indicator(&spec, &p).map_err(|e| e.in_stage("indicators"))?;
                let path = out.join(format!("{}.csv", spec.to_string().replace(':', "-")));
                f.write_csv(&path)?;
                println!("{spec}: {} valid cells -> {}", f.valid_count(), path.display());
            }
        }
        Command::Pretrain { indicator } => {
            let cfg = config(&cli.common)?;
            let p = panel(&cfg)?;
            let split = cfg.split.resolve(p.n_days())?;
            let batches = make_batches(&p, split, cfg.lookback, cfg.horizon).map_err(|e| e.in_stage("batches"))?;
            let spec: IndicatorSpec = indicator.parse()?;
            let net = cfg.network.build(cfg.lookback, cfg.seed)?;
            let target = PretrainTarget::indicator(&spec, &p)?;
            let pcfg = factorlab::factor_nn::PretrainConfig {
                seed: cfg.seed,
                ..cfg.pretrain.clone()
            };
            let (net, report) = pretrain(&net, &target, &p, &batches, &pcfg).map_err(|e| e.in_stage("pretrain"))?;
            let net = prune(&net, cfg.prune_rate).map_err(|e| e.in_stage("prune"))?;
            let mut cand = FactorCandidate::new(format!("nn-{}", spec.to_string().replace(':', "-")), net, CandidateSeed::Indicator { spec });
            cand.provenance = Provenance {
                pretrained: true,
                prune_rate: (cfg.prune_rate > 0.0).then_some(cfg.prune_rate),
                gp_initialized: false,
            };
            save_candidate(&cand, out, "")?;
            write_json(&out.join("pretrain.json"), &report)?;
            println!(
                "test MSE {:.4}, error rate {:.4}, decision accuracy {}",
                report.test.mse,
                report.test.error_rate,
                report.test.decision_accuracy.map_or("-".into(), |a| format!("{a:.4}"))
            );
        }
        Command::Train { candidate, indicator } => {
            let cfg = config(&cli.common)?;
            let p = panel(&cfg)?;
            let split = cfg.split.resolve(p.n_days())?;
            let batches = make_batches(&p, split, cfg.lookback, cfg.horizon).map_err(|e| e.in_stage("batches"))?;
            let trained = match candidate {
                Some(dir) => {
                    let (cand, _) = load_candidate(&dir)?;
                    let tcfg = factorlab::factor_nn::TrainConfig {
                        seed: cfg.seed,
                        ..cfg.train.clone()
                    };
                    train_factor(&cand, &batches, &tcfg).map_err(|e| e.in_stage("train"))?
                }
                None => {
                    let plan = match indicator {
                        Some(s) => {
                            let spec: IndicatorSpec = s.parse()?;
                            CandidatePlan {
                                name: format!("nn-{}", spec.to_string().replace(':', "-")),
                                target: Some(PretrainTarget::indicator(&spec, &p)?),
                                seed: CandidateSeed::Indicator { spec },
                            }
                        }
                        None => CandidatePlan {
                            name: "nn-random".into(),
                            seed: CandidateSeed::Random,
                            target: None,
                        },
                    };
                    build_candidate(&plan, 0, &cfg, &p, &batches)?.candidate
                }
            };
            save_candidate(&trained, out, "")?;
            let f = factorlab::factor_nn::factor_values(&trained.net, &batches, &p)?;
            f.write_csv(out.join("factor.csv"))?;
            println!("{}: best valid IC {:.4} at epoch {}", trained.name, trained.best_valid_ic, trained.best_epoch);
        }
        Command::Gp => {
            let cfg = config(&cli.common)?;
            let p = panel(&cfg)?;
            let split = cfg.split.resolve(p.n_days())?;
            let gcfg = factorlab::gp::GpConfig {
                seed: cfg.seed,
                ..cfg.gp.clone()
            };
            let run = evolve(None, &p, &split, &gcfg).map_err(|e| e.in_stage("gp"))?;
            mkdir(out)?;
            write_json(&out.join("trace.json"), &run.trace)?;
            let mut best = String::new();
            for (i, m) in run.best.iter().enumerate() {
                eval_tree(&m.tree, &p)?.write_csv(out.join(format!("gp-{i}.csv")))?;
                best.push_str(&format!("{}\t{}\n", m.fitness, m.tree));
                println!("gp-{i}  train IC {:.4}  {}", m.fitness, m.tree);
            }
            std::fs::write(out.join("best.txt"), best).map_err(|e| Error::io(out, e))?;
        }
        Command::Evaluate { factors, split } => {
            let cfg = config(&cli.common)?;
            let p = panel(&cfg)?;
            let range = cfg.split.resolve(p.n_days())?.range(split_kind(&split)?);
            mkdir(out)?;
            let mut values = Vec::new();
            let mut names = Vec::new();
            for path in &factors {
                let f = FactorMatrix::read_csv(path, p.dates(), p.symbols())?;
                let name = file_stem(path);
                let st = ic_stats(&f, &p, range.clone(), cfg.horizon).map_err(|e| e.in_stage("evaluate"))?;
                EvalReport::new(&name, &split, &st, None).write_json(out.join(format!("{name}.json")))?;
                println!("{name}: mean IC {:.4}  std {:.4}  IR {:.3}  days {}", st.mean, st.std, st.ir, st.daily.len());
                values.push(f);
                names.push(name);
            }
            if values.len() >= 2 {
                let k = cfg.eval.clusters.min(values.len());
                let d = diversity_score(&values, range, k, cfg.eval.cross_section, cfg.seed).map_err(|e| e.in_stage("diversity"))?;
                write_distance_csv(out.join("distance.csv"), &names, &d.symmetric)?;
                println!("diversity {:.4}, clusters {:?}", d.score, d.assignment);
            }
        }
        Command::Backtest { factor, split } => {
            let cfg = config(&cli.common)?;
            let p = panel(&cfg)?;
            let range = cfg.split.resolve(p.n_days())?.range(split_kind(&split)?);
            let f = FactorMatrix::read_csv(&factor, p.dates(), p.symbols())?;
            let bt = backtest(&f, &p, range, &cfg.eval.backtest).map_err(|e| e.in_stage("backtest"))?;
            mkdir(out)?;
            let name = file_stem(&factor);
            bt.write_equity_csv(out.join(format!("{name}_equity.csv")))?;
            write_json(&out.join(format!("{name}_backtest.json")), &bt)?;
            let perf = &bt.performance;
            println!(
                "{name}: cumulative {:.4}  annualized {:.4}  max DD {:.4}  Sharpe {:.3}  commission {:.5}",
                perf.cumulative_return, perf.annualized_return, perf.max_drawdown, perf.sharpe, bt.total_commission
            );
        }
        Command::Compare { runs } => {
            let cmp = compare_runs(&runs)?;
            mkdir(out)?;
            std::fs::write(out.join("comparison.json"), cmp.to_json()?).map_err(|e| Error::io(out, e))?;
            let text = cmp.to_text();
            std::fs::write(out.join("comparison.txt"), &text).map_err(|e| Error::io(out, e))?;
            print!("{text}");
        }
        Command::Run { scheme } => {
            let mut cfg = config(&cli.common)?;
            if let Some(s) = scheme {
                cfg.scheme = s.parse::<Scheme>()?;
            }
            let outcome = run_pipeline(&cfg, out)?;
            let s = &outcome.summary;
            println!("{} -> {}", s.scheme, outcome.dir.display());
            for f in &s.factors {
                println!("  {:<16} test IC {:.4}  {}", f.name, f.test.ic.mean, f.origin);
            }
            if let Some(d) = s.diversity {
                println!("  diversity {d:.4}");
            }
            if let Some(c) = &s.combined {
                println!("  combined test IC {:.4}", c.ic.mean);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{DataSource, ExperimentConfig, Scheme};
use crate::error::{Error, Result};
use crate::evaluation::{
    backtest, combine_factors, diversity_score, ic_stats, optimal_combination, top_by_weight, write_distance_csv,
    Combination, EvalReport, FactorSet,
};
use crate::factor_nn::{
    factor_values, pretrain, prune, save_candidate, train_factor, CandidateSeed, FactorCandidate, PretrainReport,
    PretrainTarget,
};
use crate::gp::{eval_tree, evolve, GpRun};
use crate::indicators::compute_indicator;
use crate::market::{
    generate_synthetic_market, load_panel, make_batches, BatchSet, FactorMatrix, LoadOptions, PricePanel, SplitKind,
    SplitSpec,
};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Parse(e.to_string()))
}

/// The market a config describes, plus the hidden factor for synthetic data.
pub struct LoadedData {
    pub panel: PricePanel,
    pub hidden: Option<FactorMatrix>,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData> {
    match &cfg.data {
        DataSource::Synthetic {
            n_symbols,
            n_days,
            alpha,
        } => {
            let m = generate_synthetic_market(*n_symbols, *n_days, cfg.seed, alpha)?;
            Ok(LoadedData {
                panel: m.panel,
                hidden: Some(m.hidden),
            })
        }
        DataSource::Csv { path } => {
            let (panel, report) = load_panel(path, &LoadOptions::default())?;
            if report.invalid_masked > 0 || report.missing_cells > 0 {
                warn!("{}: {} invalid rows masked, {} cells missing", path.display(), report.invalid_masked, report.missing_cells);
            }
            Ok(LoadedData { panel, hidden: None })
        }
    }
}

/// A factor from any family, ready for evaluation.
#[derive(Clone, Debug)]
pub struct NamedFactor {
    pub name: String,
    /// `gp`, `nnafc` or `pk`.
    pub family: String,
    /// Indicator spec, expression or pretraining target it came from.
    pub origin: String,
    pub values: FactorMatrix,
}

/// What a network candidate imitates before IC training.
#[derive(Clone, Debug)]
pub struct CandidatePlan {
    pub name: String,
    pub seed: CandidateSeed,
    pub target: Option<PretrainTarget>,
}

impl CandidatePlan {
    pub fn target_label(&self) -> String {
        match &self.seed {
            CandidateSeed::Random => "none".into(),
            CandidateSeed::Indicator { spec } => format!("indicator {spec}"),
            CandidateSeed::Expression { expr } => format!("gp {expr}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedCandidate {
    pub candidate: FactorCandidate,
    pub pretrain: Option<PretrainReport>,
}

/// Builds, pretrains (when the plan has a target and epochs > 0), prunes and
/// IC-trains one network. `index` decorrelates the seeds of a pool.
pub fn build_candidate(
    plan: &CandidatePlan,
    index: usize,
    cfg: &ExperimentConfig,
    panel: &PricePanel,
    batches: &BatchSet,
) -> Result<TrainedCandidate> {
    let base = cfg.seed.wrapping_mul(1_000_003).wrapping_add(index as u64 * 7919);
    let mut net = stage("build", cfg.network.build(cfg.lookback, base))?;
    let mut report = None;
    let mut provenance = crate::factor_nn::Provenance::default();
    if let (Some(target), true) = (&plan.target, cfg.pretrain.epochs > 0) {
        let pcfg = crate::factor_nn::PretrainConfig {
            seed: base.wrapping_add(1),
            ..cfg.pretrain.clone()
        };
        let (fitted, rep) = stage("pretrain", pretrain(&net, target, panel, batches, &pcfg))?;
        net = fitted;
        report = Some(rep);
        provenance.pretrained = true;
        provenance.gp_initialized = matches!(plan.seed, CandidateSeed::Expression { .. });
        if cfg.prune_rate > 0.0 {
            net = stage("prune", prune(&net, cfg.prune_rate))?;
            provenance.prune_rate = Some(cfg.prune_rate);
        }
    }
    let mut cand = FactorCandidate::new(plan.name.clone(), net, plan.seed.clone());
    cand.provenance = provenance;
    let tcfg = crate::factor_nn::TrainConfig {
        seed: base.wrapping_add(2),
        ..cfg.train.clone()
    };
    let trained = stage("train", train_factor(&cand, batches, &tcfg))?;
    Ok(TrainedCandidate {
        candidate: trained,
        pretrain: report,
    })
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '-' }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSummary {
    pub name: String,
    pub family: String,
    pub origin: String,
    #[serde(with = "crate::stats::nan_as_null")]
    pub valid_ic: f64,
    pub test: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub scheme: Scheme,
    pub network: Option<String>,
    pub seed: u64,
    pub data_hash: String,
    pub factors: Vec<FactorSummary>,
    #[serde(with = "crate::stats::nan_as_null")]
    pub mean_test_ic: f64,
    #[serde(with = "crate::stats::nan_as_null")]
    pub best_test_ic: f64,
    pub diversity: Option<f64>,
    pub clusters: Option<Vec<usize>>,
    pub combination: Option<Combination>,
    pub combined: Option<EvalReport>,
    /// Test IC of the planted factor on synthetic data.
    pub oracle_test_ic: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub candidate: String,
    pub target: String,
}

/// Content hashes of everything a run wrote. Contains no timestamps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub scheme: Scheme,
    pub seed: u64,
    pub config_hash: String,
    pub data_hash: String,
    pub split_hash: String,
    pub pretraining_targets: Vec<PretrainRecord>,
    /// Relative path to SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub manifest: Manifest,
}

/// Records artifacts as they are written.
struct RunDir {
    root: PathBuf,
    artifacts: BTreeMap<String, String>,
}

impl RunDir {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_file(&self.root.join(rel), bytes)?;
        self.artifacts.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Registers a file written by another writer.
    fn record(&mut self, rel: &str) -> Result<()> {
        let path = self.root.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.artifacts.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn ensure_dir(&self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}

fn split_hash(data_hash: &str, split: &SplitSpec, lookback: usize, horizon: usize) -> String {
    sha256_hex(
        format!(
            "{data_hash} train={} valid={} test={} lookback={lookback} horizon={horizon}",
            split.train_days, split.valid_days, split.test_days
        )
        .as_bytes(),
    )
}

fn gp_factors(run: &GpRun, panel: &PricePanel) -> Result<Vec<NamedFactor>> {
    run.best
        .iter()
        .enumerate()
        .map(|(i, m)| {
            Ok(NamedFactor {
                name: format!("gp-{i}"),
                family: "gp".into(),
                origin: m.tree.to_string(),
                values: eval_tree(&m.tree, panel)?,
            })
        })
        .collect()
}

/// IC-optimal weights estimated on the validation split.
fn validation_combination(factors: &[NamedFactor], panel: &PricePanel, split: &SplitSpec, cfg: &ExperimentConfig) -> Option<Combination> {
    let fs = FactorSet::build(
        factors.iter().map(|f| f.name.clone()).collect(),
        factors.iter().map(|f| f.values.clone()).collect(),
        panel,
        split.range(SplitKind::Valid),
        cfg.horizon,
    );
    match fs.and_then(|fs| optimal_combination(&fs, cfg.eval.lambda)) {
        Ok(c) => Some(c),
        Err(e) => {
            warn!("combination weights unavailable: {e}");
            None
        }
    }
}

fn evaluate(
    f: &FactorMatrix,
    name: &str,
    panel: &PricePanel,
    split: &SplitSpec,
    cfg: &ExperimentConfig,
) -> Result<(EvalReport, crate::evaluation::BacktestReport)> {
    let test = split.range(SplitKind::Test);
    let ic = ic_stats(f, panel, test.clone(), cfg.horizon)?;
    let bt = backtest(f, panel, test, &cfg.eval.backtest)?;
    Ok((EvalReport::new(name, "test", &ic, Some(&bt)), bt))
}

/// Runs one scheme end to end and writes its artifacts under `out`.
pub fn run_pipeline(cfg: &ExperimentConfig, out: impl AsRef<Path>) -> Result<RunOutcome> {
    let started = Instant::now();
    stage("config", cfg.validate())?;
    let cfg = cfg.resolved();
    let out = out.as_ref().to_path_buf();
    let mut rd = RunDir {
        root: out.clone(),
        artifacts: BTreeMap::new(),
    };
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let config_text = stage("config", cfg.to_toml())?;
    rd.write("config.toml", config_text.as_bytes())?;

    let data = stage("data", load_data(&cfg))?;
    let panel = &data.panel;
    rd.ensure_dir("data")?;
    stage("data", panel.write_csv(out.join("data/panel.csv")))?;
    rd.record("data/panel.csv")?;
    let data_hash = rd.artifacts["data/panel.csv"].clone();
    let split = stage("data", cfg.split.resolve(panel.n_days()))?;
    let split_hash = split_hash(&data_hash, &split, cfg.lookback, cfg.horizon);
    info!(
        "{}: {} symbols x {} days, split {}/{}/{}",
        cfg.scheme,
        panel.n_symbols(),
        panel.n_days(),
        split.train_days,
        split.valid_days,
        split.test_days
    );

    let mut factors: Vec<NamedFactor> = Vec::new();
    let mut pretraining_targets = Vec::new();

    let gp_run = if cfg.scheme.uses_gp() {
        let gcfg = crate::gp::GpConfig {
            seed: cfg.seed.wrapping_add(17),
            ..cfg.gp.clone()
        };
        let run = stage("gp", evolve(None, panel, &split, &gcfg))?;
        rd.write("gp/trace.json", to_json(&run.trace)?.as_bytes())?;
        let best: String = run.best.iter().map(|m| format!("{}\t{}\n", m.fitness, m.tree)).collect();
        rd.write("gp/best.txt", best.as_bytes())?;
        Some(run)
    } else {
        None
    };

    if matches!(cfg.scheme, Scheme::OnlyGp | Scheme::Combine) {
        factors.extend(stage("gp", gp_factors(gp_run.as_ref().expect("gp ran"), panel))?);
    }

    if cfg.scheme == Scheme::PkOnly {
        for spec in stage("indicators", cfg.indicator_specs())? {
            factors.push(NamedFactor {
                name: format!("pk-{}", slug(&spec.to_string())),
                family: "pk".into(),
                origin: spec.to_string(),
                values: stage("indicators", compute_indicator(&spec, panel))?,
            });
        }
    }

    if cfg.scheme.uses_networks() {
        let batches = stage("batches", make_batches(panel, split, cfg.lookback, cfg.horizon))?;
        let plans: Vec<CandidatePlan> = if cfg.scheme == Scheme::GpAndNnafc {
            let run = gp_run.as_ref().expect("gp ran");
            stage("gp", gp_factors(run, panel))?
                .into_iter()
                .map(|f| CandidatePlan {
                    name: format!("nn-{}", f.name),
                    seed: CandidateSeed::Expression { expr: f.origin.clone() },
                    target: Some(PretrainTarget::factor(f.values)),
                })
                .collect()
        } else {
            stage("indicators", cfg.indicator_specs())?
                .into_iter()
                .map(|spec| {
                    Ok(CandidatePlan {
                        name: format!("nn-{}", slug(&spec.to_string())),
                        target: Some(PretrainTarget::indicator(&spec, panel)?),
                        seed: CandidateSeed::Indicator { spec },
                    })
                })
                .collect::<Result<_>>()
                .map_err(|e: Error| e.in_stage("indicators"))?
        };
        let trained: Vec<TrainedCandidate> = plans
            .par_iter()
            .enumerate()
            .map(|(i, p)| build_candidate(p, i, &cfg, panel, &batches))
            .collect::<Result<_>>()?;
        for (plan, t) in plans.iter().zip(trained) {
            let dir = format!("candidates/{}", plan.name);
            stage("write", save_candidate(&t.candidate, out.join(&dir), &split_hash))?;
            rd.record(&format!("{dir}/net.txt"))?;
            rd.record(&format!("{dir}/meta.json"))?;
            if let Some(rep) = &t.pretrain {
                rd.write(&format!("{dir}/pretrain.json"), to_json(rep)?.as_bytes())?;
            }
            pretraining_targets.push(PretrainRecord {
                candidate: plan.name.clone(),
                target: plan.target_label(),
            });
            factors.push(NamedFactor {
                name: plan.name.clone(),
                family: "nnafc".into(),
                origin: plan.target_label(),
                values: stage("evaluate", factor_values(&t.candidate.net, &batches, panel))?,
            });
        }
    }

    if cfg.scheme == Scheme::Combine && factors.len() > cfg.eval.combine_top {
        if let Some(c) = validation_combination(&factors, panel, &split, &cfg) {
            let keep = top_by_weight(&c.weights, cfg.eval.combine_top);
            info!("combine: keeping {} of {} factors", keep.len(), factors.len());
            factors = keep.into_iter().map(|i| factors[i].clone()).collect();
        }
    }
    if factors.is_empty() {
        return Err(Error::Config("scheme produced no factors".into()).in_stage("evaluate"));
    }

    let mut summaries = Vec::with_capacity(factors.len());
    rd.ensure_dir("factors")?;
    rd.ensure_dir("reports")?;
    for f in &factors {
        stage("write", f.values.write_csv(out.join(format!("factors/{}.csv", f.name))))?;
        rd.record(&format!("factors/{}.csv", f.name))?;
        let (report, bt) = stage("evaluate", evaluate(&f.values, &f.name, panel, &split, &cfg))?;
        rd.write(&format!("reports/{}.json", f.name), report.to_json()?.as_bytes())?;
        stage("write", bt.write_equity_csv(out.join(format!("reports/{}_equity.csv", f.name))))?;
        rd.record(&format!("reports/{}_equity.csv", f.name))?;
        let valid_ic = stage("evaluate", ic_stats(&f.values, panel, split.range(SplitKind::Valid), cfg.horizon))?.mean;
        summaries.push(FactorSummary {
            name: f.name.clone(),
            family: f.family.clone(),
            origin: f.origin.clone(),
            valid_ic,
            test: report,
        });
    }

    let (diversity, clusters) = if factors.len() >= 2 {
        let k = cfg.eval.clusters.min(factors.len());
        let values: Vec<FactorMatrix> = factors.iter().map(|f| f.values.clone()).collect();
        let d = stage("diversity", diversity_score(&values, split.range(SplitKind::Test), k, cfg.eval.cross_section, cfg.seed))?;
        let names: Vec<String> = factors.iter().map(|f| f.name.clone()).collect();
        stage("write", write_distance_csv(out.join("distance.csv"), &names, &d.symmetric))?;
        rd.record("distance.csv")?;
        stage("write", write_distance_csv(out.join("distance_raw.csv"), &names, &d.raw))?;
        rd.record("distance_raw.csv")?;
        (Some(d.score), Some(d.assignment))
    } else {
        (None, None)
    };

    let combination = validation_combination(&factors, panel, &split, &cfg);
    let combined = match &combination {
        Some(c) => {
            let values: Vec<FactorMatrix> = factors.iter().map(|f| f.values.clone()).collect();
            let cf = stage("combine", combine_factors(&values, &c.weights))?;
            let (report, bt) = stage("combine", evaluate(&cf, "combined", panel, &split, &cfg))?;
            stage("write", bt.write_equity_csv(out.join("reports/combined_equity.csv")))?;
            rd.record("reports/combined_equity.csv")?;
            rd.write("reports/combined.json", report.to_json()?.as_bytes())?;
            Some(report)
        }
        None => None,
    };

    let oracle_test_ic = match &data.hidden {
        Some(h) => Some(stage("evaluate", ic_stats(h, panel, split.range(SplitKind::Test), cfg.horizon))?.mean),
        None => None,
    };
    let ics: Vec<f64> = summaries.iter().map(|s| s.test.ic.mean).collect();
    let summary = RunSummary {
        schema_version: MANIFEST_SCHEMA_VERSION,
        scheme: cfg.scheme,
        network: cfg.scheme.uses_networks().then(|| cfg.network.label()),
        seed: cfg.seed,
        data_hash: data_hash.clone(),
        mean_test_ic: crate::stats::mean(&ics),
        best_test_ic: ics.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        factors: summaries,
        diversity,
        clusters,
        combination,
        combined,
        oracle_test_ic,
    };
    rd.write("summary.json", to_json(&summary)?.as_bytes())?;

    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        scheme: cfg.scheme,
        seed: cfg.seed,
        config_hash: sha256_hex(config_text.as_bytes()),
        data_hash,
        split_hash,
        pretraining_targets,
        artifacts: rd.artifacts.clone(),
    };
    write_file(&out.join("manifest.json"), to_json(&manifest)?.as_bytes())?;
    let timing = Timing {
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    write_file(&out.join("timing.json"), to_json(&timing)?.as_bytes())?;
    info!("{}: mean test IC {:.4} ({:.1}s)", cfg.scheme, summary.mean_test_ic, timing.wall_seconds);
    Ok(RunOutcome {
        dir: out,
        summary,
        manifest,
    })
}

pub fn load_summary(dir: impl AsRef<Path>) -> Result<RunSummary> {
    let path = dir.as_ref().join("summary.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn load_timing(dir: impl AsRef<Path>) -> Option<Timing> {
    let text = std::fs::read_to_string(dir.as_ref().join("timing.json")).ok()?;
    serde_json::from_str(&text).ok()
}

/// Loads the config a run directory was produced with.
pub fn load_run_config(dir: impl AsRef<Path>) -> Result<ExperimentConfig> {
    ExperimentConfig::load(dir.as_ref().join("config.toml"))
}

//! Network factor lifecycle: pre-train on a prior-knowledge target, prune,
//! train against the IC loss, evaluate with exact ranks, attribute with saliency.

use std::path::Path;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{load_network, save_network, sgd_step, NetGradients, NetworkGraph, Tensor};
use crate::error::{invalid, Error, Result};
use crate::ic::{exact_spearman, ic_loss, KernelParams};
use crate::indicators::{indicator_to_decision, DecisionRule, IndicatorKind, IndicatorSpec};
use crate::market::{BatchSet, FactorMatrix, PricePanel, SplitKind, WindowBatch, STD_CLAMP};
use crate::stats;

/// Index of the close channel in window tensors.
const CLOSE: usize = 3;

/// How a pre-training target is brought to the network's output scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetScaling {
    /// Same units as prices: standardized with the close channel's statistics.
    PriceLevel,
    /// A difference of prices: divided by the close channel's std.
    PriceDifference,
    /// Standardized with the target's own per-symbol training statistics.
    Own,
}

impl TargetScaling {
    pub fn for_indicator(kind: IndicatorKind) -> Self {
        match kind {
            IndicatorKind::Ma | IndicatorKind::Ema => TargetScaling::PriceLevel,
            IndicatorKind::Macd => TargetScaling::PriceDifference,
            _ => TargetScaling::Own,
        }
    }
}

/// A factor matrix to imitate, with how to scale it and how to score decisions.
#[derive(Clone, Debug)]
pub struct PretrainTarget {
    pub values: FactorMatrix,
    pub scaling: TargetScaling,
    pub decision: Option<(IndicatorKind, DecisionRule)>,
}

impl PretrainTarget {
    pub fn indicator(spec: &IndicatorSpec, panel: &PricePanel) -> Result<Self> {
        let kind = spec.kind();
        Ok(Self {
            values: crate::indicators::compute_indicator(spec, panel)?,
            scaling: TargetScaling::for_indicator(kind),
            decision: Some((kind, DecisionRule::default_for(kind))),
        })
    }

    /// Any other factor (e.g. an evolved expression), scaled by its own statistics.
    pub fn factor(values: FactorMatrix) -> Self {
        Self {
            values,
            scaling: TargetScaling::Own,
            decision: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Days whose gradients are averaged into one step.
    pub days_per_step: usize,
    pub clip_norm: Option<f64>,
    /// Clip scaled targets to +-this many std (outlier removal).
    pub outlier_clip: Option<f64>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 0.01,
            days_per_step: 4,
            clip_norm: Some(5.0),
            outlier_clip: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitFit {
    /// Mean squared error in scaled target units.
    pub mse: f64,
    /// Mean |y - f| / |y| in original units over cells with |y| > 1e-8.
    pub error_rate: f64,
    /// Share of matching buy/no-buy labels, when the target has a decision rule.
    pub decision_accuracy: Option<f64>,
    pub cells: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epochs_run: usize,
    pub loss_history: Vec<f64>,
    pub train: SplitFit,
    pub valid: SplitFit,
    pub test: SplitFit,
    /// Epoch where the loss became non-finite; the returned net is the last finite one.
    pub diverged_at: Option<usize>,
}

/// Per-symbol affine map between target units and network output units.
#[derive(Clone, Debug)]
struct Scaler {
    center: Vec<f64>,
    scale: Vec<f64>,
    clip: Option<f64>,
}

impl Scaler {
    fn fit(target: &PretrainTarget, batches: &BatchSet, clip: Option<f64>) -> Self {
        let ns = batches.standardizer.n_symbols();
        let st = &batches.standardizer;
        let (center, scale) = match target.scaling {
            TargetScaling::PriceLevel => (
                (0..ns).map(|s| st.mean(s, CLOSE)).collect(),
                (0..ns).map(|s| st.std(s, CLOSE)).collect(),
            ),
            TargetScaling::PriceDifference => (vec![0.0; ns], (0..ns).map(|s| st.std(s, CLOSE)).collect()),
            TargetScaling::Own => {
                let train = batches.split.range(SplitKind::Train);
                let mut c = vec![0.0; ns];
                let mut k = vec![1.0; ns];
                for s in 0..ns {
                    let xs: Vec<f64> = train.clone().filter_map(|d| target.values.get(d, s)).collect();
                    if xs.is_empty() {
                        continue;
                    }
                    c[s] = stats::mean(&xs);
                    let sd = stats::std_pop(&xs);
                    k[s] = if sd < STD_CLAMP { 1.0 } else { sd };
                }
                (c, k)
            }
        };
        Self { center, scale, clip }
    }

    fn forward(&self, sym: usize, y: f64) -> f64 {
        let z = (y - self.center[sym]) / self.scale[sym];
        match self.clip {
            Some(c) => z.clamp(-c, c),
            None => z,
        }
    }

    fn inverse(&self, sym: usize, z: f64) -> f64 {
        z * self.scale[sym] + self.center[sym]
    }
}

/// Rows of a batch with a defined target and their scaled target values.
struct Labeled<'a> {
    batch: WindowBatch,
    targets: Vec<f64>,
    source: &'a WindowBatch,
}

fn label<'a>(batches: &'a [WindowBatch], target: &FactorMatrix, scaler: &Scaler) -> Vec<Labeled<'a>> {
    batches
        .iter()
        .filter_map(|b| {
            let rows: Vec<usize> = (0..b.len()).filter(|&r| target.get(b.day, b.symbols[r]).is_some()).collect();
            if rows.is_empty() {
                return None;
            }
            let sub = b.select(&rows);
            let targets = sub
                .symbols
                .iter()
                .map(|&s| scaler.forward(s, target.get(b.day, s).expect("filtered")))
                .collect();
            Some(Labeled {
                batch: sub,
                targets,
                source: b,
            })
        })
        .collect()
}

/// MSE gradient of one labeled day, with seed `2 (f - y) / total_cells`.
fn mse_grads(net: &NetworkGraph, day: &Labeled<'_>, total_cells: f64) -> Result<(f64, NetGradients)> {
    let fwd = net.forward(&day.batch.tensor)?;
    let out = fwd.output();
    let sse: f64 = out.iter().zip(&day.targets).map(|(f, y)| (f - y).powi(2)).sum();
    let seed: Vec<f64> = out.iter().zip(&day.targets).map(|(f, y)| 2.0 * (f - y) / total_cells).collect();
    Ok((sse, fwd.backward(net, &seed)?))
}

/// Fits `net` to a target factor by mean squared error.
pub fn pretrain(
    net: &NetworkGraph,
    target: &PretrainTarget,
    panel: &PricePanel,
    batches: &BatchSet,
    cfg: &PretrainConfig,
) -> Result<(NetworkGraph, PretrainReport)> {
    if cfg.days_per_step < 1 {
        return Err(invalid("days_per_step must be at least 1"));
    }
    if !target.values.same_axes(&FactorMatrix::empty_like(panel)) {
        return Err(Error::Shape("pretraining target must share the panel axes".into()));
    }
    let scaler = Scaler::fit(target, batches, cfg.outlier_clip);
    let train = label(&batches.train, &target.values, &scaler);
    if train.is_empty() {
        return Err(invalid("pretraining target is undefined on every training day"));
    }
    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = PretrainReport::default();

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        let mut cells = 0usize;
        for chunk in order.chunks(cfg.days_per_step) {
            let n_cells: usize = chunk.iter().map(|&i| train[i].targets.len()).sum();
            let mut total: Option<NetGradients> = None;
            for &i in chunk {
                let (e, g) = match mse_grads(&net, &train[i], n_cells as f64) {
                    Ok(v) => v,
                    Err(Error::NonFinite(_)) => {
                        report.diverged_at = Some(epoch);
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                };
                sse += e;
                match &mut total {
                    Some(t) => t.accumulate(&g),
                    None => total = Some(g),
                }
            }
            cells += n_cells;
            let grads = total.expect("non-empty chunk");
            let mut next = net.clone();
            match sgd_step(&mut next, &grads, cfg.lr, cfg.clip_norm) {
                Ok(()) if next.params().iter().all(|p| p.value.all_finite()) => net = next,
                Ok(()) | Err(Error::NonFinite(_)) => {
                    report.diverged_at = Some(epoch);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let loss = sse / cells as f64;
        if !loss.is_finite() {
            report.diverged_at = Some(epoch);
            break;
        }
        debug!("pretrain epoch {epoch}: mse {loss:.6}");
        report.loss_history.push(loss);
        report.epochs_run = epoch;
    }
    if let Some(e) = report.diverged_at {
        warn!("pretraining diverged at epoch {e}; keeping the last finite network");
    }

    let predicted = predict_target(&net, batches, &scaler, panel)?;
    for kind in [SplitKind::Train, SplitKind::Valid, SplitKind::Test] {
        let fit = split_fit(&net, batches.get(kind), target, &scaler, &predicted, panel)?;
        match kind {
            SplitKind::Train => report.train = fit,
            SplitKind::Valid => report.valid = fit,
            SplitKind::Test => report.test = fit,
        }
    }
    info!(
        "pretrained: train mse {:.5}, test mse {:.5}, test accuracy {:?}",
        report.train.mse, report.test.mse, report.test.decision_accuracy
    );
    Ok((net, report))
}

/// Network predictions in target units for every batch day.
fn predict_target(net: &NetworkGraph, batches: &BatchSet, scaler: &Scaler, panel: &PricePanel) -> Result<FactorMatrix> {
    let mut out = FactorMatrix::empty_like(panel);
    for b in batches.train.iter().chain(&batches.valid).chain(&batches.test) {
        let y = net.predict(&b.tensor)?;
        for (r, &s) in b.symbols.iter().enumerate() {
            out.set(b.day, s, scaler.inverse(s, y[r]));
        }
    }
    Ok(out)
}

fn split_fit(
    net: &NetworkGraph,
    batches: &[WindowBatch],
    target: &PretrainTarget,
    scaler: &Scaler,
    predicted: &FactorMatrix,
    panel: &PricePanel,
) -> Result<SplitFit> {
    let labeled = label(batches, &target.values, scaler);
    let (mut sse, mut cells, mut rel, mut rel_n) = (0.0, 0usize, 0.0, 0usize);
    for day in &labeled {
        let out = net.predict(&day.batch.tensor)?;
        for (r, (&f, &y)) in out.iter().zip(&day.targets).enumerate() {
            sse += (f - y).powi(2);
            cells += 1;
            let s = day.batch.symbols[r];
            let raw = target.values.get(day.source.day, s).expect("labeled");
            if raw.abs() > 1e-8 {
                rel += (raw - scaler.inverse(s, f)).abs() / raw.abs();
                rel_n += 1;
            }
        }
    }
    let decision_accuracy = match target.decision {
        Some((kind, rule)) => {
            let truth = indicator_to_decision(kind, &target.values, rule, panel)?;
            let guess = indicator_to_decision(kind, predicted, rule, panel)?;
            let (mut hit, mut total) = (0usize, 0usize);
            for b in batches {
                for &s in &b.symbols {
                    if let (Some(a), Some(g)) = (truth.get(b.day, s), guess.get(b.day, s)) {
                        total += 1;
                        hit += usize::from(a == g);
                    }
                }
            }
            (total > 0).then(|| hit as f64 / total as f64)
        }
        None => None,
    };
    Ok(SplitFit {
        mse: if cells > 0 { sse / cells as f64 } else { f64::NAN },
        error_rate: if rel_n > 0 { rel / rel_n as f64 } else { f64::NAN },
        decision_accuracy,
        cells,
    })
}

/// Masks the `floor(rate * len)` smallest-magnitude entries of every weight
/// tensor (biases are never pruned). Equal magnitudes prune the lower flat
/// index first. Entries already masked count as magnitude zero.
pub fn prune(net: &NetworkGraph, rate: f64) -> Result<NetworkGraph> {
    if !(0.0..1.0).contains(&rate) {
        return Err(invalid(format!("pruning rate {rate} must lie in [0, 1)")));
    }
    let mut out = net.clone();
    for p in out.params_mut().iter_mut().filter(|p| p.is_weight) {
        let eff = p.effective();
        let n = eff.len();
        let count = (rate * n as f64).floor() as usize;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| {
            eff.data()[a]
                .abs()
                .total_cmp(&eff.data()[b].abs())
                .then(a.cmp(&b))
        });
        let mut mask = p.mask.clone().unwrap_or_else(|| Tensor::filled(p.value.shape().to_vec(), 1.0));
        for &k in &idx[..count] {
            mask.data_mut()[k] = 0.0;
        }
        if count > 0 || p.mask.is_some() {
            p.mask = Some(mask);
        }
    }
    Ok(out)
}

/// Where a candidate's initial weights came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CandidateSeed {
    Random,
    Indicator { spec: IndicatorSpec },
    Expression { expr: String },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub pretrained: bool,
    pub prune_rate: Option<f64>,
    pub gp_initialized: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean surrogate loss over the epoch's steps (NaN for epoch 0).
    #[serde(with = "crate::stats::nan_as_null")]
    pub loss: f64,
    /// Mean daily exact Spearman on the training split.
    #[serde(with = "crate::stats::nan_as_null")]
    pub train_ic: f64,
    /// Mean daily exact Spearman on the validation split.
    #[serde(with = "crate::stats::nan_as_null")]
    pub valid_ic: f64,
}

/// A network factor with its origin and training trace.
#[derive(Clone, Debug)]
pub struct FactorCandidate {
    pub name: String,
    pub net: NetworkGraph,
    pub seed: CandidateSeed,
    pub provenance: Provenance,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_ic: f64,
}

impl FactorCandidate {
    pub fn new(name: impl Into<String>, net: NetworkGraph, seed: CandidateSeed) -> Self {
        Self {
            name: name.into(),
            net,
            seed,
            provenance: Provenance::default(),
            history: Vec::new(),
            best_epoch: 0,
            best_valid_ic: f64::NAN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Trading days per loss evaluation.
    pub q: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub clip_norm: Option<f64>,
    pub kernel: KernelParams,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            q: 20,
            epochs: 60,
            lr: 0.05,
            patience: 10,
            clip_norm: Some(5.0),
            kernel: KernelParams::default(),
            seed: 0,
        }
    }
}

/// Mean daily exact Spearman of a network over batches (days with < 3 symbols skipped).
pub fn mean_exact_ic(net: &NetworkGraph, batches: &[WindowBatch]) -> Result<f64> {
    let mut ics = Vec::with_capacity(batches.len());
    for b in batches.iter().filter(|b| b.len() >= 3) {
        ics.push(exact_spearman(&net.predict(&b.tensor)?, &b.returns)?);
    }
    Ok(stats::mean(&ics))
}

/// Maximizes the surrogate IC on the training split with early stopping on
/// validation exact IC. Returns the best-validation snapshot.
pub fn train_factor(candidate: &FactorCandidate, batches: &BatchSet, cfg: &TrainConfig) -> Result<FactorCandidate> {
    if cfg.q < 1 {
        return Err(invalid("q must be at least 1"));
    }
    let train: Vec<&WindowBatch> = batches.train.iter().filter(|b| b.len() >= 3).collect();
    if train.is_empty() || batches.valid.is_empty() {
        return Err(invalid("training needs non-empty train and validation splits"));
    }
    let mut net = candidate.net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = vec![EpochRecord {
        epoch: 0,
        loss: f64::NAN,
        train_ic: mean_exact_ic(&net, &batches.train)?,
        valid_ic: mean_exact_ic(&net, &batches.valid)?,
    }];
    let mut best = (0usize, history[0].valid_ic, net.clone());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stale = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(cfg.q) {
            let days: Vec<&WindowBatch> = chunk.iter().map(|&i| train[i]).collect();
            let out = ic_loss(&days, &net, &cfg.kernel).map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged { epoch },
                e => e,
            })?;
            losses.push(out.loss);
            sgd_step(&mut net, &out.grads, cfg.lr, cfg.clip_norm)?;
            if !net.params().iter().all(|p| p.value.all_finite()) {
                return Err(Error::Diverged { epoch });
            }
        }
        let rec = EpochRecord {
            epoch,
            loss: stats::mean(&losses),
            train_ic: mean_exact_ic(&net, &batches.train)?,
            valid_ic: mean_exact_ic(&net, &batches.valid)?,
        };
        debug!(
            "{} epoch {epoch}: loss {:.4} train IC {:.4} valid IC {:.4}",
            candidate.name, rec.loss, rec.train_ic, rec.valid_ic
        );
        history.push(rec);
        if rec.valid_ic > best.1 {
            best = (epoch, rec.valid_ic, net.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let mut out = candidate.clone();
    out.net = best.2;
    out.best_epoch = best.0;
    out.best_valid_ic = best.1;
    out.history = history;
    info!("{}: best valid IC {:.4} at epoch {}", out.name, out.best_valid_ic, out.best_epoch);
    Ok(out)
}

/// Factor values of a frozen network plus per-day exact ICs.
#[derive(Clone, Debug)]
pub struct FactorEvaluation {
    pub factor: FactorMatrix,
    /// (day index, exact Spearman vs realized forward returns).
    pub daily_ic: Vec<(usize, f64)>,
    pub mean_ic: f64,
}

pub fn evaluate_factor(net: &NetworkGraph, batches: &[WindowBatch], panel: &PricePanel) -> Result<FactorEvaluation> {
    let mut factor = FactorMatrix::empty_like(panel);
    let mut daily_ic = Vec::new();
    for b in batches {
        let y = net.predict(&b.tensor)?;
        for (r, &s) in b.symbols.iter().enumerate() {
            factor.set(b.day, s, y[r]);
        }
        if b.len() >= 3 {
            daily_ic.push((b.day, exact_spearman(&y, &b.returns)?));
        }
    }
    let ics: Vec<f64> = daily_ic.iter().map(|(_, v)| *v).collect();
    Ok(FactorEvaluation {
        factor,
        mean_ic: stats::mean(&ics),
        daily_ic,
    })
}

/// Network values for every batch day of every split.
pub fn factor_values(net: &NetworkGraph, batches: &BatchSet, panel: &PricePanel) -> Result<FactorMatrix> {
    let mut factor = FactorMatrix::empty_like(panel);
    for b in batches.train.iter().chain(&batches.valid).chain(&batches.test) {
        let y = net.predict(&b.tensor)?;
        for (r, &s) in b.symbols.iter().enumerate() {
            factor.set(b.day, s, y[r]);
        }
    }
    Ok(factor)
}

/// Gradient of one symbol's factor value with respect to its `5 x m` window.
pub fn saliency(net: &NetworkGraph, window: &Tensor) -> Result<Tensor> {
    let m = net.lookback();
    let single = Tensor::new(vec![1, crate::market::N_CHANNELS, m], window.data().to_vec())?;
    saliency_in_batch(net, &single, 0)
}

/// Saliency of row `row` of a batch tensor; needed for conv nets, whose output
/// depends on neighbouring symbols.
pub fn saliency_in_batch(net: &NetworkGraph, batch: &Tensor, row: usize) -> Result<Tensor> {
    let fwd = net.forward(batch)?;
    let n = batch.rows();
    if row >= n {
        return Err(invalid(format!("row {row} outside a batch of {n}")));
    }
    let mut seed = vec![0.0; n];
    seed[row] = 1.0;
    let g = fwd.backward(net, &seed)?;
    let width = g.input.cols();
    let data = g.input.data()[row * width..(row + 1) * width].to_vec();
    let out = Tensor::new(g.input.shape()[1..].to_vec(), data)?;
    out.check_finite("saliency")?;
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    name: String,
    seed: CandidateSeed,
    provenance: Provenance,
    history: Vec<EpochRecord>,
    best_epoch: usize,
    #[serde(with = "crate::stats::nan_as_null")]
    best_valid_ic: f64,
    split_hash: String,
}

/// Writes `net.txt` and `meta.json` under `dir`.
pub fn save_candidate(candidate: &FactorCandidate, dir: impl AsRef<Path>, split_hash: &str) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_network(&candidate.net, dir.join("net.txt"))?;
    let meta = BundleMeta {
        name: candidate.name.clone(),
        seed: candidate.seed.clone(),
        provenance: candidate.provenance.clone(),
        history: candidate.history.clone(),
        best_epoch: candidate.best_epoch,
        best_valid_ic: candidate.best_valid_ic,
        split_hash: split_hash.to_string(),
    };
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads a bundle written by [`save_candidate`]; returns it with its split hash.
pub fn load_candidate(dir: impl AsRef<Path>) -> Result<(FactorCandidate, String)> {
    let dir = dir.as_ref();
    let net = load_network(dir.join("net.txt"))?;
    let path = dir.join("meta.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: BundleMeta = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok((
        FactorCandidate {
            name: meta.name,
            net,
            seed: meta.seed,
            provenance: meta.provenance,
            history: meta.history,
            best_epoch: meta.best_epoch,
            best_valid_ic: meta.best_valid_ic,
        },
        meta.split_hash,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{build_dense, Activation, Layer, Param};
    use crate::market::N_CHANNELS;

    #[test]
    fn prune_counts_and_ties() {
        let layers = vec![Layer::Dense {
            fan_in: 10,
            fan_out: 1,
            activation: Activation::None,
        }];
        let w = vec![0.5, -0.1, 0.1, 0.3, 0.0, -0.7, 0.1, 0.9, 0.2, -0.2];
        let params = vec![
            Param {
                value: Tensor::matrix(10, 1, w).unwrap(),
                mask: None,
                is_weight: true,
            },
            Param {
                value: Tensor::zeros(vec![1, 1]),
                mask: None,
                is_weight: false,
            },
        ];
        let net = NetworkGraph::with_params(2, layers, params).unwrap();
        let p = prune(&net, 0.5).unwrap();
        let mask = p.params()[0].mask.as_ref().unwrap().data().to_vec();
        assert_eq!(mask.iter().filter(|&&v| v == 0.0).count(), 5);
        // |w| order: 0.0(4), 0.1(1), 0.1(2), 0.1(6), 0.2(8), 0.2(9) -> first five
        assert_eq!(mask, vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(p.params()[1].mask.is_none());
        assert!(prune(&net, 1.0).is_err());
    }

    #[test]
    fn rate_zero_is_identity() {
        let net = build_dense(&[6], Activation::Tanh, 2, 3).unwrap();
        let p = prune(&net, 0.0).unwrap();
        let x = Tensor::new(vec![3, N_CHANNELS, 2], (0..30).map(|k| (k as f64).cos()).collect()).unwrap();
        let a = net.predict(&x).unwrap();
        let b = p.predict(&x).unwrap();
        assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn linear_saliency_is_weight_and_complete() {
        let m = 3;
        let net = build_dense(&[], Activation::None, m, 7).unwrap();
        let w = net.params()[0].value.data().to_vec();
        let b = net.params()[1].value.data()[0];
        let window = Tensor::new(vec![N_CHANNELS, m], (0..15).map(|k| (k as f64 * 0.3).sin()).collect()).unwrap();
        let s = saliency(&net, &window).unwrap();
        assert_eq!(s.data(), w.as_slice());
        let out = net
            .predict(&Tensor::new(vec![1, N_CHANNELS, m], window.data().to_vec()).unwrap())
            .unwrap()[0];
        let total: f64 = s.data().iter().zip(window.data()).map(|(a, x)| a * x).sum();
        assert!((total - (out - b)).abs() < 1e-9);
    }
}

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{build_conv, build_dense, build_fcn, build_recurrent, Activation, ConvSpec, NetworkGraph};
use crate::error::{Error, Result};
use crate::evaluation::{BacktestConfig, CrossSection, DEFAULT_CLUSTERS};
use crate::factor_nn::{PretrainConfig, TrainConfig};
use crate::gp::GpConfig;
use crate::indicators::IndicatorSpec;
use crate::market::{AlphaSpec, SplitSpec, DEFAULT_HORIZON, DEFAULT_LOOKBACK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Evolved expression trees only.
    OnlyGp,
    /// Networks pretrained on indicators, pruned and IC-trained.
    OnlyNnafc,
    /// Networks pretrained on the best evolved trees.
    GpAndNnafc,
    /// The indicators themselves, no learning.
    PkOnly,
    /// Union of evolved and network factors, reduced to the largest combination weights.
    Combine,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::OnlyGp, Scheme::OnlyNnafc, Scheme::GpAndNnafc, Scheme::PkOnly, Scheme::Combine];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::OnlyGp => "only-gp",
            Scheme::OnlyNnafc => "only-nnafc",
            Scheme::GpAndNnafc => "gp-and-nnafc",
            Scheme::PkOnly => "pk-only",
            Scheme::Combine => "combine",
        }
    }

    pub fn uses_gp(&self) -> bool {
        matches!(self, Scheme::OnlyGp | Scheme::GpAndNnafc | Scheme::Combine)
    }

    pub fn uses_networks(&self) -> bool {
        matches!(self, Scheme::OnlyNnafc | Scheme::GpAndNnafc | Scheme::Combine)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        n_symbols: usize,
        n_days: usize,
        #[serde(default)]
        alpha: AlphaSpec,
    },
    Csv {
        path: PathBuf,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            n_symbols: 100,
            n_days: 400,
            alpha: AlphaSpec::default(),
        }
    }
}

/// Train and validation lengths; the test split takes the rest when `test_days` is unset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_days: usize,
    pub valid_days: usize,
    pub test_days: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let s = SplitSpec::standard();
        Self {
            train_days: s.train_days,
            valid_days: s.valid_days,
            test_days: None,
        }
    }
}

impl SplitConfig {
    pub fn resolve(&self, n_days: usize) -> Result<SplitSpec> {
        match self.test_days {
            Some(t) => {
                let s = SplitSpec::new(self.train_days, self.valid_days, t)?;
                if s.total() > n_days {
                    return Err(Error::PanelTooShort {
                        needed: s.total(),
                        have: n_days,
                    });
                }
                Ok(s)
            }
            None => SplitSpec::fill(n_days, self.train_days, self.valid_days),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Fcn,
    Lstm,
    Conv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    /// FCN hidden layers (3 to 5).
    pub hidden_layers: usize,
    /// FCN width, or LSTM hidden size.
    pub width: usize,
    pub activation: Activation,
    pub conv: ConvSpec,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            kind: NetworkKind::Fcn,
            hidden_layers: 3,
            width: 64,
            activation: Activation::Relu,
            conv: ConvSpec::default(),
        }
    }
}

impl NetworkSpec {
    /// FCN widths outside 64..=128 are allowed here for small experiments.
    pub fn build(&self, lookback: usize, seed: u64) -> Result<NetworkGraph> {
        match self.kind {
            NetworkKind::Fcn => {
                if (64..=128).contains(&self.width) {
                    build_fcn(self.hidden_layers, self.width, self.activation, lookback, seed)
                } else {
                    build_dense(&vec![self.width; self.hidden_layers], self.activation, lookback, seed)
                }
            }
            NetworkKind::Lstm => build_recurrent(self.width, lookback, seed),
            NetworkKind::Conv => build_conv(&self.conv, lookback, seed),
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            NetworkKind::Fcn => format!("fcn-{}x{}", self.hidden_layers, self.width),
            NetworkKind::Lstm => format!("lstm-{}", self.width),
            NetworkKind::Conv => format!("conv-{}x{}", self.conv.n_layers, self.conv.kernel_width),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub clusters: usize,
    pub cross_section: CrossSection,
    /// Risk-aversion of the combination objective.
    pub lambda: f64,
    /// Members kept by the `combine` scheme.
    pub combine_top: usize,
    pub backtest: BacktestConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            clusters: DEFAULT_CLUSTERS,
            cross_section: CrossSection::default(),
            lambda: 1.0,
            combine_top: 5,
            backtest: BacktestConfig::default(),
        }
    }
}

/// One experiment, read from TOML. Every section is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    pub seed: u64,
    /// Window length `m`.
    pub lookback: usize,
    /// Forward-return horizon; overrides the horizons of the GP and backtest sections.
    pub horizon: usize,
    pub prune_rate: f64,
    /// Prior-knowledge pool, e.g. `"ma:10"`, `"macd:12:26"`.
    pub indicators: Vec<String>,
    pub data: DataSource,
    pub split: SplitConfig,
    pub network: NetworkSpec,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub gp: GpConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::OnlyNnafc,
            seed: 0,
            lookback: DEFAULT_LOOKBACK,
            horizon: DEFAULT_HORIZON,
            prune_rate: 0.3,
            indicators: IndicatorSpec::prior_knowledge_pool().iter().map(ToString::to_string).collect(),
            data: DataSource::default(),
            split: SplitConfig::default(),
            network: NetworkSpec::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            gp: GpConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn indicator_specs(&self) -> Result<Vec<IndicatorSpec>> {
        self.indicators.iter().map(|s| s.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.lookback < 1 || self.horizon < 1 {
            return cfg_err("lookback and horizon must be positive".into());
        }
        if !(0.0..1.0).contains(&self.prune_rate) {
            return cfg_err(format!("prune_rate {} outside [0, 1)", self.prune_rate));
        }
        if self.scheme.uses_networks() || self.scheme == Scheme::PkOnly {
            if self.indicators.is_empty() && self.scheme != Scheme::GpAndNnafc {
                return cfg_err("indicator pool is empty".into());
            }
            for spec in self.indicator_specs()? {
                spec.validate()?;
            }
        }
        if self.eval.clusters < 1 || !(self.eval.lambda > 0.0) || self.eval.combine_top < 1 {
            return cfg_err("eval needs clusters >= 1, lambda > 0 and combine_top >= 1".into());
        }
        self.gp.validate()?;
        self.eval.backtest.validate()?;
        self.train.kernel.validate()?;
        Ok(())
    }

    /// Copies the top-level horizon into the sections that carry their own.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.gp.horizon = c.horizon;
        c.eval.backtest.horizon = c.horizon;
        c
    }
}

//! Run configuration, read from a TOML key/value file. Every key is optional.
//!
//! ```toml
//! seed = 7
//! offline = true
//!
//! [learn]
//! alpha = 0.005
//! q = 0.999
//! min_windows = 10
//!
//! [screen]
//! rho = 0.1
//! rho_arb = 0.5
//!
//! [provider]
//! endpoint = "https://api.example.com/v1/chat/completions"
//! model = "gpt-5-mini"
//! api_key_env = "OPENAI_API_KEY"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use sactx_core::inference::ScreenConfig;
use sactx_core::rulelearn::LearnConfig;
use sactx_core::saindex::{Aggregation, SignatureParams};
use sactx_core::semantics::SemanticConfig;
use sactx_llm::ProviderConfig;

use crate::error::{read, CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnSection {
    pub alpha: f64,
    pub q: f64,
    pub z_max: f64,
    pub theta_base: f64,
    pub n_small: usize,
    pub min_windows: usize,
    pub level_gap: f64,
}

impl Default for LearnSection {
    fn default() -> Self {
        let d = LearnConfig::default();
        Self {
            alpha: d.alpha,
            q: d.distance.q,
            z_max: d.distance.z_max,
            theta_base: d.distance.theta_base,
            n_small: d.distance.n_small,
            min_windows: d.min_windows,
            level_gap: d.level.range_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenSection {
    pub rho: f64,
    pub rho_arb: f64,
    pub arbitrate_fallback: bool,
    pub theta_amb: f64,
    pub related_k: usize,
    pub r_min: f64,
}

impl Default for ScreenSection {
    fn default() -> Self {
        let d = ScreenConfig::default();
        Self {
            rho: d.rho,
            rho_arb: d.rho_arb,
            arbitrate_fallback: d.arbitrate_fallback,
            theta_amb: d.theta_amb,
            related_k: d.related_k,
            r_min: d.r_min,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSection {
    pub aggregation: Aggregation,
    pub level_bins: u8,
    pub trend_deadband: f64,
}

impl Default for IndexSection {
    fn default() -> Self {
        let p = SignatureParams::default();
        Self { aggregation: Aggregation::Mean, level_bins: p.level_bins, trend_deadband: p.trend_deadband }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemanticsSection {
    pub r_min: f64,
    pub max_in_flight: usize,
}

impl Default for SemanticsSection {
    fn default() -> Self {
        let d = SemanticConfig::default();
        Self { r_min: d.r_min, max_in_flight: d.max_in_flight }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Overrides `provider.offline` when set.
    pub offline: Option<bool>,
    pub learn: LearnSection,
    pub screen: ScreenSection,
    pub index: IndexSection,
    pub semantics: SemanticsSection,
    pub provider: ProviderConfig,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::usage(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => Self::parse(&read(p)?).map_err(|e| CliError::usage(format!("{}: {e}", p.display()))),
        }
    }

    /// Applies the command-line overrides shared by every subcommand.
    pub fn with_overrides(mut self, seed: Option<u64>, offline: bool) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if offline {
            self.offline = Some(true);
        }
        if let Some(o) = self.offline {
            self.provider.offline = o;
        }
        self
    }

    pub fn learn_config(&self, window: usize) -> LearnConfig {
        let mut c = LearnConfig { window, seed: self.seed, min_windows: self.learn.min_windows, alpha: self.learn.alpha, ..LearnConfig::default() };
        c.rho = self.screen.rho;
        c.distance.q = self.learn.q;
        c.distance.z_max = self.learn.z_max;
        c.distance.theta_base = self.learn.theta_base;
        c.distance.n_small = self.learn.n_small;
        c.level.range_fraction = self.learn.level_gap;
        c
    }

    pub fn screen_config(&self) -> ScreenConfig {
        let s = &self.screen;
        ScreenConfig {
            rho: s.rho,
            rho_arb: s.rho_arb,
            arbitrate_fallback: s.arbitrate_fallback,
            theta_amb: s.theta_amb,
            related_k: s.related_k,
            r_min: s.r_min,
            ..ScreenConfig::default()
        }
    }

    pub fn signature_params(&self) -> SignatureParams {
        SignatureParams { level_bins: self.index.level_bins, trend_deadband: self.index.trend_deadband, ..SignatureParams::default() }
    }

    pub fn semantic_config(&self) -> SemanticConfig {
        SemanticConfig { r_min: self.semantics.r_min, max_in_flight: self.semantics.max_in_flight, ..SemanticConfig::default() }
    }
}

//! Per-context normal-mode learning.
//!
//! Windows are keyed by `(sensor, actuator combination)`. Under each key the descriptors are
//! split into coarse level groups, embedded in 2-D per group, density-clustered, and the
//! clusters of all groups are consolidated by silhouette. Every surviving cluster becomes a
//! [`ModeRule`]: a quantile envelope plus a robust diagonal distance model.

pub mod consolidate;
pub mod embed;
pub mod hdbscan;
pub mod learn;
pub mod level;
pub mod model;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ActuatorCombination, CORE_DIM};
use crate::saindex::ActuatorBinning;

pub use consolidate::{consolidate, consolidate_grouped, robust_scale, ConsolidateParams};
pub use embed::{Embedder, PcaEmbedder, Point2, UmapEmbedder};
pub use hdbscan::{cluster_density, default_min_cluster_size};
pub use learn::{cluster_key, learn_rulebank, learn_rulebank_with, LearnConfig};
pub use level::{group_by_level, LevelGapParams};
pub use model::{calibrate_threshold, DistanceParams, QuantileEnvelope, RobustDistanceModel, RobustScaler, Row};

/// Serialization format version of [`RuleBank`].
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SacKey {
    pub sensor: String,
    pub ac: ActuatorCombination,
}

impl SacKey {
    pub fn new(sensor: impl Into<String>, ac: ActuatorCombination) -> Self {
        Self { sensor: sensor.into(), ac }
    }
}

impl fmt::Display for SacKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.sensor, self.ac)
    }
}

/// One consolidated cluster of a key's windows, row-aligned with `members`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeCluster {
    pub members: Vec<usize>,
    pub core: Vec<[f64; CORE_DIM]>,
    pub descriptors: Vec<Row<f64>>,
}

impl ModeCluster {
    pub fn support(&self) -> usize {
        self.members.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct ModeRule<T> {
    pub mode_id: u32,
    pub support: usize,
    pub envelope: QuantileEnvelope<T>,
    pub distance: RobustDistanceModel<T>,
    pub semantic_text: Option<String>,
}

/// Address of a mode inside a [`RuleBank`]: position of its key and its `mode_id`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeRef {
    pub key: u32,
    pub mode: u32,
}

/// All modes of one key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyRules {
    pub sensor: String,
    pub ac: ActuatorCombination,
    pub modes: Vec<ModeRule<f64>>,
    /// Learned from fewer than `min_windows` windows: used only through the pooled index.
    pub pooled_only: bool,
}

impl KeyRules {
    pub fn key(&self) -> SacKey {
        SacKey::new(self.sensor.clone(), self.ac.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorMeta {
    pub sensor: String,
    /// Ordered actuator scope; positions match the entries of every key's `ac`.
    pub actuators: Vec<String>,
    /// Global training range `[min, max]`.
    pub range: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankMetadata {
    pub window: usize,
    pub alpha: f64,
    pub q: f64,
    pub rho: f64,
    pub z_max: f64,
    pub theta_base: f64,
    pub n_small: usize,
    pub min_windows: usize,
    pub seed: u64,
    pub manifest_digest: String,
    pub sensors: Vec<SensorMeta>,
    pub binnings: Vec<ActuatorBinning>,
}

impl BankMetadata {
    pub fn sensor(&self, name: &str) -> Option<&SensorMeta> {
        self.sensors.iter().find(|s| s.sensor == name)
    }
}

/// Exact-context rule store, keys ascending by `(sensor, ac)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleBank {
    pub version: u32,
    pub metadata: BankMetadata,
    pub keys: Vec<KeyRules>,
}

impl RuleBank {
    pub fn key_index(&self, sensor: &str, ac: &ActuatorCombination) -> Option<usize> {
        self.keys.binary_search_by(|k| (k.sensor.as_str(), &k.ac).cmp(&(sensor, ac))).ok()
    }

    pub fn get(&self, sensor: &str, ac: &ActuatorCombination) -> Option<&KeyRules> {
        self.key_index(sensor, ac).map(|i| &self.keys[i])
    }

    pub fn mode(&self, r: ModeRef) -> Option<&ModeRule<f64>> {
        self.keys.get(r.key as usize)?.modes.iter().find(|m| m.mode_id == r.mode)
    }

    pub fn n_modes(&self) -> usize {
        self.keys.iter().map(|k| k.modes.len()).sum()
    }

    /// Structural checks applied after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::data(format!("rule bank version {} (expected {FORMAT_VERSION})", self.version)));
        }
        for pair in self.keys.windows(2) {
            if (&pair[0].sensor, &pair[0].ac) >= (&pair[1].sensor, &pair[1].ac) {
                return Err(Error::data(format!("rule bank keys out of order at {}", pair[1].key())));
            }
        }
        for k in &self.keys {
            let meta = self
                .metadata
                .sensor(&k.sensor)
                .ok_or_else(|| Error::data(format!("key {} has no sensor metadata", k.key())))?;
            if meta.actuators.len() != k.ac.states().len() {
                return Err(Error::data(format!("key {} does not match the actuator scope", k.key())));
            }
            if k.modes.is_empty() {
                return Err(Error::data(format!("key {} has no modes", k.key())));
            }
            if k.modes.iter().any(|m| m.support == 0) {
                return Err(Error::data(format!("key {} has a mode with zero support", k.key())));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(crate::json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bank: RuleBank = serde_json::from_str(text)?;
        bank.validate()?;
        Ok(bank)
    }
}

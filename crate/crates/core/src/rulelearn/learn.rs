//! Orchestration of the four learning stages across all keys of a training set.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::consolidate::{consolidate_grouped, robust_scale, ConsolidateParams};
use super::embed::{Embedder, UmapEmbedder};
use super::hdbscan::cluster_density;
use super::level::{group_by_level, LevelGapParams};
use super::model::{DistanceParams, QuantileEnvelope, RobustDistanceModel, RobustScaler, Row};
use super::{BankMetadata, KeyRules, ModeCluster, ModeRule, RuleBank, SacKey, SensorMeta, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::features::{Descriptor13, FeatureExtractor};
use crate::saindex::ActuatorBinning;
use crate::Window;

#[derive(Clone, Debug, PartialEq)]
pub struct LearnConfig {
    pub window: usize,
    pub alpha: f64,
    pub distance: DistanceParams<f64>,
    /// Default relaxation recorded for screening.
    pub rho: f64,
    pub min_windows: usize,
    pub seed: u64,
    pub level: LevelGapParams,
    pub consolidate: ConsolidateParams,
    pub umap: UmapEmbedder,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            window: crate::features::DEFAULT_WINDOW,
            alpha: 0.005,
            distance: DistanceParams::default(),
            rho: 0.1,
            min_windows: 10,
            seed: 0,
            level: LevelGapParams::default(),
            consolidate: ConsolidateParams::default(),
            umap: UmapEmbedder::default(),
        }
    }
}

/// Learns a rule bank with the configured UMAP-style embedder.
pub fn learn_rulebank(
    windows: &[Window],
    sensors: &[SensorMeta],
    binnings: &[ActuatorBinning],
    manifest_digest: &str,
    cfg: &LearnConfig,
) -> Result<RuleBank> {
    learn_rulebank_with(windows, sensors, binnings, manifest_digest, cfg, &cfg.umap)
}

pub fn learn_rulebank_with(
    windows: &[Window],
    sensors: &[SensorMeta],
    binnings: &[ActuatorBinning],
    manifest_digest: &str,
    cfg: &LearnConfig,
    embedder: &dyn Embedder,
) -> Result<RuleBank> {
    if windows.is_empty() {
        return Err(Error::usage("no training windows"));
    }
    for s in sensors {
        if s.actuators.is_empty() {
            return Err(Error::Manifest(format!("sensor {} has no configured actuators", s.sensor)));
        }
    }

    let mut by_key: BTreeMap<SacKey, Vec<&Window>> = BTreeMap::new();
    for w in windows {
        let meta = sensors
            .iter()
            .find(|s| s.sensor == w.sensor_id)
            .ok_or_else(|| Error::Manifest(format!("sensor {} is not in the manifest", w.sensor_id)))?;
        if w.ac.states().len() != meta.actuators.len() {
            return Err(Error::Manifest(format!(
                "window of {} at {} carries {} actuator states, scope has {}",
                w.sensor_id,
                w.start_index,
                w.ac.states().len(),
                meta.actuators.len()
            )));
        }
        if w.len() != cfg.window {
            return Err(Error::usage(format!("window of {} samples, expected {}", w.len(), cfg.window)));
        }
        by_key.entry(SacKey::new(w.sensor_id.clone(), w.ac.clone())).or_default().push(w);
    }

    let extractor = FeatureExtractor::<f64>::new(cfg.window)?;
    let jobs: Vec<(SacKey, Vec<&Window>)> = by_key
        .into_iter()
        .map(|(k, mut ws)| {
            ws.sort_by_key(|w| w.start_index);
            (k, ws)
        })
        .collect();

    let keys: Vec<KeyRules> = jobs
        .par_iter()
        .map(|(key, ws)| {
            let meta = sensors.iter().find(|s| s.sensor == key.sensor).expect("checked above");
            let descriptors = ws
                .iter()
                .map(|w| {
                    extractor.descriptor(&w.values).map_err(|e| match e {
                        Error::NonFinite { index } => Error::data(format!(
                            "non-finite sample of {} at index {}",
                            w.sensor_id,
                            w.start_index + index
                        )),
                        other => other,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let pooled_only = descriptors.len() < cfg.min_windows;
            let clusters = if pooled_only {
                vec![whole(&descriptors)]
            } else {
                cluster_key(&descriptors, meta.range[1] - meta.range[0], cfg, embedder, key_seed(cfg.seed, key))?
            };
            let modes = compile_modes(&descriptors, &clusters, cfg)?;
            Ok(KeyRules { sensor: key.sensor.clone(), ac: key.ac.clone(), modes, pooled_only })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sensors_meta = sensors.to_vec();
    sensors_meta.sort_by(|a, b| a.sensor.cmp(&b.sensor));
    let mut binnings = binnings.to_vec();
    binnings.sort_by(|a, b| a.actuator.cmp(&b.actuator));

    Ok(RuleBank {
        version: FORMAT_VERSION,
        metadata: BankMetadata {
            window: cfg.window,
            alpha: cfg.alpha,
            q: cfg.distance.q,
            rho: cfg.rho,
            z_max: cfg.distance.z_max,
            theta_base: cfg.distance.theta_base,
            n_small: cfg.distance.n_small,
            min_windows: cfg.min_windows,
            seed: cfg.seed,
            manifest_digest: manifest_digest.to_string(),
            sensors: sensors_meta,
            binnings,
        },
        keys,
    })
}

fn whole(descriptors: &[Descriptor13<f64>]) -> ModeCluster {
    cluster_of(descriptors, (0..descriptors.len()).collect())
}

fn cluster_of(descriptors: &[Descriptor13<f64>], members: Vec<usize>) -> ModeCluster {
    ModeCluster {
        core: members.iter().map(|&i| descriptors[i].core.to_array()).collect(),
        descriptors: members.iter().map(|&i| descriptors[i].to_array()).collect(),
        members,
    }
}

/// Stages (level grouping, embedding, density clustering, consolidation) for one key's
/// descriptors; `sensor_span` is the width of the sensor's global range.
pub fn cluster_key(
    descriptors: &[Descriptor13<f64>],
    sensor_span: f64,
    cfg: &LearnConfig,
    embedder: &dyn Embedder,
    seed: u64,
) -> Result<Vec<ModeCluster>> {
    if descriptors.is_empty() {
        return Err(Error::usage("no descriptors to cluster"));
    }
    let core: Vec<Vec<f64>> = descriptors.iter().map(|d| d.core.to_array().to_vec()).collect();

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut tags = Vec::new();
    for (gi, group) in group_by_level(descriptors, sensor_span, &cfg.level).into_iter().enumerate() {
        let rows: Vec<Vec<f64>> = group.iter().map(|&i| core[i].clone()).collect();
        let embedding = embedder.embed(&rows, mix(seed, gi as u64))?;
        let labels = cluster_density(&embedding);
        let k = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut parts = vec![Vec::new(); k];
        for (pos, &l) in labels.iter().enumerate() {
            parts[l].push(group[pos]);
        }
        for part in parts.into_iter().filter(|p| !p.is_empty()) {
            clusters.push(part);
            tags.push(gi);
        }
    }

    let merged = consolidate_grouped(&robust_scale(&core), clusters, &tags, &cfg.consolidate);
    Ok(merged.into_iter().map(|m| cluster_of(descriptors, m)).collect())
}

fn compile_modes(descriptors: &[Descriptor13<f64>], clusters: &[ModeCluster], cfg: &LearnConfig) -> Result<Vec<ModeRule<f64>>> {
    let all: Vec<Row<f64>> = descriptors.iter().map(|d| d.to_array()).collect();
    let scaler = RobustScaler::fit(&all)?;
    clusters
        .iter()
        .enumerate()
        .map(|(id, c)| {
            Ok(ModeRule {
                mode_id: id as u32,
                support: c.support(),
                envelope: QuantileEnvelope::build(&c.descriptors, cfg.alpha)?,
                distance: RobustDistanceModel::fit(&c.descriptors, scaler.clone(), &cfg.distance)?,
                semantic_text: None,
            })
        })
        .collect()
}

/// FNV-1a style mixing, stable across platforms and releases.
fn fnv(bytes: impl IntoIterator<Item = u8>, mut h: u64) -> u64 {
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn mix(seed: u64, salt: u64) -> u64 {
    fnv(salt.to_le_bytes(), fnv(seed.to_le_bytes(), 0xcbf2_9ce4_8422_2325))
}

fn key_seed(seed: u64, key: &SacKey) -> u64 {
    let h = fnv(key.sensor.bytes().chain([0xff]).chain(key.ac.states().iter().copied()), fnv(seed.to_le_bytes(), 0xcbf2_9ce4_8422_2325));
    h ^ (h >> 29)
}

//! Actuator-marginalized mode index, sensor–actuator relatedness and fallback retrieval.
//!
//! For every `(sensor, actuator, state)` the index pools the modes of every learned context in
//! which that actuator had that state. Each pooled mode gets a coarse categorical signature;
//! how much the signature distribution of a sensor shifts across an actuator's states is the
//! relatedness `r(s, a)`, the mean base-2 Jensen–Shannon divergence over state pairs.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Descriptor13;
use crate::rulelearn::{ModeRef, ModeRule, RuleBank};
use crate::scalar::Scalar;

pub const DEFAULT_MAX_STATE: u8 = 4;
const VALUE_MAP_MAX_CARDINALITY: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BinningStrategy {
    /// Distinct training values relabelled densely in ascending order.
    ValueMap { values: Vec<f64> },
    /// `bins` equal-width bins over the training range.
    EqualWidth { lo: f64, hi: f64, bins: u8 },
}

/// Quantization map `b_a` from raw actuator readings to states `0..=max_state`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActuatorBinning {
    pub actuator: String,
    pub max_state: u8,
    pub strategy: BinningStrategy,
}

impl ActuatorBinning {
    /// Value map when the training data has at most `min(10, max_state + 1)` distinct values,
    /// equal-width bins otherwise.
    pub fn fit(actuator: impl Into<String>, training: &[f64], max_state: u8) -> Result<Self> {
        let actuator = actuator.into();
        if training.is_empty() {
            return Err(Error::data(format!("no training values for actuator {actuator}")));
        }
        if let Some(i) = training.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite value for actuator {actuator} at row {i}")));
        }
        let mut distinct = training.to_vec();
        distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        distinct.dedup();
        let cap = VALUE_MAP_MAX_CARDINALITY.min(max_state as usize + 1);
        let strategy = if distinct.len() <= cap {
            BinningStrategy::ValueMap { values: distinct }
        } else {
            BinningStrategy::EqualWidth { lo: distinct[0], hi: *distinct.last().expect("non-empty"), bins: max_state + 1 }
        };
        Ok(Self { actuator, max_state, strategy })
    }

    pub fn equal_width(actuator: impl Into<String>, lo: f64, hi: f64, max_state: u8) -> Self {
        Self { actuator: actuator.into(), max_state, strategy: BinningStrategy::EqualWidth { lo, hi, bins: max_state + 1 } }
    }

    /// State of a raw reading; out-of-range and unseen values clamp to the nearest bin.
    pub fn discretize(&self, raw: f64) -> u8 {
        match &self.strategy {
            BinningStrategy::ValueMap { values } => {
                let mut best = 0;
                for (i, v) in values.iter().enumerate() {
                    if (raw - v).abs() < (raw - values[best]).abs() {
                        best = i;
                    }
                }
                best as u8
            }
            BinningStrategy::EqualWidth { lo, hi, bins } => {
                if hi <= lo || raw.is_nan() {
                    return 0;
                }
                let width = (hi - lo) / *bins as f64;
                let idx = ((raw - lo) / width).floor();
                idx.clamp(0.0, (*bins - 1) as f64) as u8
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Increase,
    Decrease,
    Maintain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variability {
    Compact,
    Middle,
    Dispersed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Stable,
    Middle,
    Fluctuating,
}

impl fmt::Display for Trend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trend::Increase => "increase",
            Trend::Decrease => "decrease",
            Trend::Maintain => "maintain",
        })
    }
}

impl fmt::Display for Variability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variability::Compact => "compact",
            Variability::Middle => "middle",
            Variability::Dispersed => "dispersed",
        })
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Stable => "stable",
            Shape::Middle => "middle",
            Shape::Fluctuating => "fluctuating",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Signature {
    pub level_bin: u8,
    pub trend: Trend,
    pub variability: Variability,
    pub shape: Shape,
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}/{}/{}/{}", self.level_bin, self.trend, self.variability, self.shape)
    }
}

/// Cut points for signature categories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureParams {
    pub level_bins: u8,
    /// Trend dead-band as a fraction of `range / W` (slope units per sample).
    pub trend_deadband: f64,
    pub compact_below: f64,
    pub dispersed_above: f64,
    pub stable_below: f64,
    pub fluctuating_above: f64,
}

impl Default for SignatureParams {
    fn default() -> Self {
        Self {
            level_bins: 5,
            trend_deadband: 0.008,
            compact_below: 0.02,
            dispersed_above: 0.10,
            stable_below: 0.5,
            fluctuating_above: 2.0,
        }
    }
}

fn span(range: [f64; 2]) -> Result<f64> {
    let s = range[1] - range[0];
    if s > 0.0 && s.is_finite() {
        Ok(s)
    } else {
        Err(Error::DegenerateRange { lo: range[0], hi: range[1] })
    }
}

pub fn level_bin(level: f64, range: [f64; 2], bins: u8) -> Result<u8> {
    let s = span(range)?;
    let idx = ((level - range[0]) / (s / bins as f64)).floor();
    Ok(idx.clamp(0.0, (bins - 1) as f64) as u8)
}

pub fn trend_of(mean_slope: f64, range: [f64; 2], window: usize, p: &SignatureParams) -> Result<Trend> {
    let tau = p.trend_deadband * span(range)? / window as f64;
    Ok(if mean_slope > tau {
        Trend::Increase
    } else if mean_slope < -tau {
        Trend::Decrease
    } else {
        Trend::Maintain
    })
}

pub fn variability_of(std: f64, range: [f64; 2], p: &SignatureParams) -> Result<Variability> {
    let rel = std / span(range)?;
    Ok(if rel < p.compact_below {
        Variability::Compact
    } else if rel > p.dispersed_above {
        Variability::Dispersed
    } else {
        Variability::Middle
    })
}

pub fn shape_of(delta: f64, range: [f64; 2], window: usize, p: &SignatureParams) -> Result<Shape> {
    let moved = delta * window as f64 / span(range)?;
    Ok(if moved < p.stable_below {
        Shape::Stable
    } else if moved > p.fluctuating_above {
        Shape::Fluctuating
    } else {
        Shape::Middle
    })
}

/// Signature of a descriptor: a mode's median descriptor or a live window's own.
pub fn signature_of<T: Scalar>(d: &Descriptor13<T>, range: [f64; 2], window: usize, p: &SignatureParams) -> Result<Signature> {
    Ok(Signature {
        level_bin: level_bin(d.core.mean.to_f64_lossy(), range, p.level_bins)?,
        trend: trend_of(d.mean_slope().to_f64_lossy(), range, window, p)?,
        variability: variability_of(d.core.std.to_f64_lossy(), range, p)?,
        shape: shape_of(d.core.delta.to_f64_lossy(), range, window, p)?,
    })
}

pub fn mode_signature(mode: &ModeRule<f64>, sensor_range: [f64; 2], window: usize, p: &SignatureParams) -> Result<Signature> {
    signature_of(&mode.distance.center(), sensor_range, window, p)
}

/// Base-2 Jensen–Shannon divergence of two aligned distributions, in `[0, 1]`.
pub fn js_divergence<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::usage("distributions over different supports"));
    }
    let tol = T::lit(1e-9);
    for (name, d) in [("P", p), ("Q", q)] {
        let total: T = d.iter().copied().sum();
        if (total - T::one()).abs() > tol || d.iter().any(|&v| v < T::zero() || !v.is_finite()) {
            return Err(Error::usage(format!("{name} is not a normalized distribution (sum {total})")));
        }
    }
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let kl = |a: &[T], m: &[T]| -> T {
        a.iter().zip(m).filter(|(&x, _)| x > T::zero()).map(|(&x, &mm)| x * (x / mm).log(two)).sum()
    };
    let m: Vec<T> = p.iter().zip(q).map(|(&a, &b)| (a + b) * half).collect();
    let js = half * kl(p, &m) + half * kl(q, &m);
    Ok(js.max(T::zero()).min(T::one()))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SaKey {
    pub sensor: String,
    pub actuator: String,
    pub state: u8,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedSignature {
    pub signature: Signature,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaEntry {
    pub sensor: String,
    pub actuator: String,
    pub state: u8,
    pub modes: Vec<ModeRef>,
    /// Support-weighted signature distribution, normalized, ascending by signature.
    pub signatures: Vec<WeightedSignature>,
}

impl SaEntry {
    pub fn key(&self) -> SaKey {
        SaKey { sensor: self.sensor.clone(), actuator: self.actuator.clone(), state: self.state }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Relatedness {
    pub sensor: String,
    pub actuator: String,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaIndex {
    pub aggregation: Aggregation,
    pub signature_params: SignatureParams,
    pub binnings: Vec<ActuatorBinning>,
    /// Ascending by `(sensor, actuator, state)`.
    pub entries: Vec<SaEntry>,
    /// Ascending by `(sensor, actuator)`.
    pub relatedness: Vec<Relatedness>,
}

impl SaIndex {
    pub fn entry(&self, sensor: &str, actuator: &str, state: u8) -> Option<&SaEntry> {
        self.entries
            .binary_search_by(|e| (e.sensor.as_str(), e.actuator.as_str(), e.state).cmp(&(sensor, actuator, state)))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn entries_for<'a>(&'a self, sensor: &'a str, actuator: &'a str) -> impl Iterator<Item = &'a SaEntry> + 'a {
        self.entries.iter().filter(move |e| e.sensor == sensor && e.actuator == actuator)
    }

    pub fn binning(&self, actuator: &str) -> Option<&ActuatorBinning> {
        self.binnings.iter().find(|b| b.actuator == actuator)
    }

    /// Stored `r(s, a)`; zero when the pair is unknown.
    pub fn r(&self, sensor: &str, actuator: &str) -> f64 {
        self.relatedness
            .iter()
            .find(|x| x.sensor == sensor && x.actuator == actuator)
            .map_or(0.0, |x| x.r)
    }
}

/// Pools every mode of the bank under each `(sensor, actuator, state)` of its context and
/// computes the relatedness table.
pub fn build_sa_index(
    bank: &RuleBank,
    binnings: &[ActuatorBinning],
    params: &SignatureParams,
    aggregation: Aggregation,
) -> Result<SaIndex> {
    if bank.keys.is_empty() {
        return Err(Error::usage("rule bank has no keys"));
    }
    let window = bank.metadata.window;
    let mut pooled: BTreeMap<SaKey, (Vec<ModeRef>, BTreeMap<Signature, f64>)> = BTreeMap::new();
    for (ki, key) in bank.keys.iter().enumerate() {
        let meta = bank
            .metadata
            .sensor(&key.sensor)
            .ok_or_else(|| Error::Manifest(format!("sensor {} missing from bank metadata", key.sensor)))?;
        for mode in &key.modes {
            let sig = mode_signature(mode, meta.range, window, params)?;
            let r = ModeRef { key: ki as u32, mode: mode.mode_id };
            for (actuator, &state) in meta.actuators.iter().zip(key.ac.states()) {
                let slot = pooled
                    .entry(SaKey { sensor: key.sensor.clone(), actuator: actuator.clone(), state })
                    .or_default();
                slot.0.push(r);
                *slot.1.entry(sig).or_insert(0.0) += mode.support as f64;
            }
        }
    }

    let entries: Vec<SaEntry> = pooled
        .into_iter()
        .map(|(k, (mut modes, sigs))| {
            modes.sort();
            let total: f64 = sigs.values().sum();
            SaEntry {
                sensor: k.sensor,
                actuator: k.actuator,
                state: k.state,
                modes,
                signatures: sigs.into_iter().map(|(signature, w)| WeightedSignature { signature, weight: w / total }).collect(),
            }
        })
        .collect();

    let mut index = SaIndex {
        aggregation,
        signature_params: *params,
        binnings: binnings.to_vec(),
        entries,
        relatedness: Vec::new(),
    };
    let mut table = Vec::new();
    for meta in &bank.metadata.sensors {
        for actuator in &meta.actuators {
            table.push(Relatedness { sensor: meta.sensor.clone(), actuator: actuator.clone(), r: relatedness(&index, &meta.sensor, actuator)? });
        }
    }
    table.sort_by(|a, b| (&a.sensor, &a.actuator).cmp(&(&b.sensor, &b.actuator)));
    index.relatedness = table;
    Ok(index)
}

fn aligned(a: &[WeightedSignature], b: &[WeightedSignature]) -> (Vec<f64>, Vec<f64>) {
    let mut support: BTreeMap<Signature, (f64, f64)> = BTreeMap::new();
    for w in a {
        support.entry(w.signature).or_default().0 += w.weight;
    }
    for w in b {
        support.entry(w.signature).or_default().1 += w.weight;
    }
    support.values().map(|&(x, y)| (x, y)).unzip()
}

/// Aggregated JS divergence between the signature distributions of every pair of states of
/// `actuator`; zero when fewer than two states have pooled modes.
pub fn relatedness(index: &SaIndex, sensor: &str, actuator: &str) -> Result<f64> {
    let dists: Vec<&SaEntry> = index.entries_for(sensor, actuator).filter(|e| !e.signatures.is_empty()).collect();
    if dists.len() < 2 {
        return Ok(0.0);
    }
    let mut values = Vec::new();
    for i in 0..dists.len() {
        for j in i + 1..dists.len() {
            let (p, q) = aligned(&dists[i].signatures, &dists[j].signatures);
            values.push(js_divergence(&p, &q)?);
        }
    }
    Ok(match index.aggregation {
        Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
        Aggregation::Max => values.iter().copied().fold(0.0, f64::max),
    })
}

/// Actuators with `r >= r_min`, strongest first, ties by actuator name, at most `k`.
pub fn related_actuators(index: &SaIndex, sensor: &str, k: usize, r_min: f64) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = index
        .relatedness
        .iter()
        .filter(|x| x.sensor == sensor && x.r >= r_min)
        .map(|x| (x.actuator.clone(), x.r))
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    out.truncate(k);
    out
}

//! Column roles, per-sensor actuator scope and windowing parameters of a dataset.
//!
//! ```toml
//! window = 30
//! stride = 30
//! timestamp = "timestamp"
//! label = "label"
//!
//! [[sensor]]
//! name = "LIT"
//! actuators = ["MV", "P1"]
//!
//! [[actuator]]
//! name = "MV"
//! max_state = 4          # optional, default 4
//! # lo = 0.0, hi = 100.0 # optional fixed equal-width range; fitted on training data otherwise
//! ```
//!
//! Every CSV column must be claimed by exactly one role.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sactx_core::features::MIN_WINDOW;
use sactx_core::rulelearn::SensorMeta;
use sactx_core::saindex::ActuatorBinning;

use crate::error::{read, CliError, Result};

pub const DEFAULT_MAX_STATE: u8 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub name: String,
    pub actuators: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorSpec {
    pub name: String,
    #[serde(default = "default_max_state")]
    pub max_state: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
}

fn default_max_state() -> u8 {
    DEFAULT_MAX_STATE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub window: usize,
    pub stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(rename = "sensor")]
    pub sensors: Vec<SensorSpec>,
    #[serde(rename = "actuator")]
    pub actuators: Vec<ActuatorSpec>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| CliError::data(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read(path)?).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::data(format!("manifest: {m}")));
        if self.window < MIN_WINDOW {
            return bad(format!("window {} below minimum {MIN_WINDOW}", self.window));
        }
        if self.stride == 0 {
            return bad("stride must be positive".into());
        }
        if self.sensors.is_empty() {
            return bad("no sensors".into());
        }
        let mut seen = BTreeSet::new();
        for c in self.columns() {
            if !seen.insert(c) {
                return bad(format!("column {c} has more than one role"));
            }
        }
        for s in &self.sensors {
            if s.actuators.is_empty() {
                return bad(format!("sensor {} has no scoped actuators", s.name));
            }
            for a in &s.actuators {
                if self.actuator(a).is_none() {
                    return bad(format!("sensor {} scopes undeclared actuator {a}", s.name));
                }
            }
        }
        for a in &self.actuators {
            match (a.lo, a.hi) {
                (Some(lo), Some(hi)) if lo >= hi || lo.is_nan() || hi.is_nan() => return bad(format!("actuator {} has lo >= hi", a.name)),
                (Some(_), None) | (None, Some(_)) => return bad(format!("actuator {} needs both lo and hi", a.name)),
                _ => {}
            }
        }
        Ok(())
    }

    /// Every column named by any role, in declaration order.
    pub fn columns(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        out.extend(self.timestamp.as_deref());
        out.extend(self.sensors.iter().map(|s| s.name.as_str()));
        out.extend(self.actuators.iter().map(|a| a.name.as_str()));
        out.extend(self.label.as_deref());
        out
    }

    pub fn actuator(&self, name: &str) -> Option<&ActuatorSpec> {
        self.actuators.iter().find(|a| a.name == name)
    }

    /// SHA-256 over the parts a learned model depends on: sensors, scopes, actuators and window.
    pub fn digest(&self) -> String {
        let canon = serde_json::json!({
            "window": self.window,
            "sensors": self.sensors,
            "actuators": self.actuators,
        });
        hex::encode(Sha256::digest(canon.to_string().as_bytes()))
    }

    /// Binning per actuator: the fixed range when given, otherwise fitted on `training`.
    pub fn binnings(&self, training: impl Fn(&str) -> Vec<f64>) -> Result<Vec<ActuatorBinning>> {
        self.actuators
            .iter()
            .map(|a| match (a.lo, a.hi) {
                (Some(lo), Some(hi)) => Ok(ActuatorBinning::equal_width(a.name.clone(), lo, hi, a.max_state)),
                _ => Ok(ActuatorBinning::fit(a.name.clone(), &training(&a.name), a.max_state)?),
            })
            .collect()
    }

    /// Sensor scopes with the global range of each sensor's training column.
    pub fn sensor_meta(&self, training: impl Fn(&str) -> Vec<f64>) -> Vec<SensorMeta> {
        self.sensors
            .iter()
            .map(|s| {
                let col = training(&s.name);
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                SensorMeta { sensor: s.name.clone(), actuators: s.actuators.clone(), range: [lo, hi] }
            })
            .collect()
    }

    /// The manifest matching simulator CSVs: LIT and FIT scoped on all three actuators.
    pub fn simulator() -> Self {
        let acts = ["MV", "P1", "P2"].map(String::from).to_vec();
        Manifest {
            window: 30,
            stride: 30,
            timestamp: Some("timestamp".into()),
            label: Some("label".into()),
            sensors: vec![
                SensorSpec { name: "LIT".into(), actuators: acts.clone() },
                SensorSpec { name: "FIT".into(), actuators: acts.clone() },
            ],
            actuators: acts
                .into_iter()
                .map(|name| ActuatorSpec { name, max_state: DEFAULT_MAX_STATE, lo: None, hi: None })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulator_manifest_round_trips() {
        let m = Manifest::simulator();
        let back = Manifest::parse(&m.to_toml()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.digest(), m.digest());
        assert_eq!(m.columns(), vec!["timestamp", "LIT", "FIT", "MV", "P1", "P2", "label"]);
    }

    #[test]
    fn rejects_bad_manifests() {
        let base = Manifest::simulator();
        let mut m = base.clone();
        m.sensors[0].actuators.clear();
        assert!(m.validate().is_err());
        let mut m = base.clone();
        m.sensors[0].actuators.push("V9".into());
        assert!(m.validate().is_err());
        let mut m = base.clone();
        m.label = Some("LIT".into());
        assert!(m.validate().is_err());
        let mut m = base.clone();
        m.window = 5;
        assert!(m.validate().is_err());
        assert!(Manifest::parse("window = 30\nstride = 30\nbogus = 1\nsensor = []\nactuator = []").is_err());
    }

    #[test]
    fn digest_tracks_scope() {
        let a = Manifest::simulator();
        let mut b = a.clone();
        b.sensors[0].actuators.pop();
        assert_ne!(a.digest(), b.digest());
        let mut c = a.clone();
        c.stride = 1;
        assert_eq!(a.digest(), c.digest());
    }
}

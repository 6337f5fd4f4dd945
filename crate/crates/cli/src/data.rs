//! CSV ingestion and window materialization.

use std::io::Read;
use std::path::Path;

use sactx_core::features::{slice_windows, ActuatorCombination};
use sactx_core::saindex::ActuatorBinning;
use sactx_core::Window;

use crate::error::{CliError, Result};
use crate::manifest::Manifest;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub timestamp: Option<Vec<f64>>,
    pub sensors: Vec<(String, Vec<f64>)>,
    pub actuators: Vec<(String, Vec<f64>)>,
    pub labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sensors.first().map_or(0, |s| s.1.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.sensors.iter().chain(&self.actuators).find(|c| c.0 == name).map(|c| c.1.as_slice())
    }
}

enum Slot {
    Timestamp,
    Sensor(usize),
    Actuator(usize),
    Label,
}

pub fn ingest_csv(path: &Path, manifest: &Manifest) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    ingest_reader(file, manifest).map_err(|e| match e {
        CliError::Data(m) => CliError::data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn ingest_reader<R: Read>(input: R, manifest: &Manifest) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::data(format!("line 1: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let mut slots = Vec::with_capacity(header.len());
    for h in &header {
        let slot = if manifest.timestamp.as_deref() == Some(h) {
            Slot::Timestamp
        } else if manifest.label.as_deref() == Some(h) {
            Slot::Label
        } else if let Some(i) = manifest.sensors.iter().position(|s| &s.name == h) {
            Slot::Sensor(i)
        } else if let Some(i) = manifest.actuators.iter().position(|a| &a.name == h) {
            Slot::Actuator(i)
        } else {
            return Err(CliError::data(format!("line 1: column {h} has no role in the manifest")));
        };
        slots.push(slot);
    }
    for c in manifest.columns() {
        match header.iter().filter(|h| h.as_str() == c).count() {
            0 => return Err(CliError::data(format!("line 1: missing column {c}"))),
            1 => {}
            _ => return Err(CliError::data(format!("line 1: duplicate column {c}"))),
        }
    }

    let mut ds = Dataset {
        timestamp: manifest.timestamp.as_ref().map(|_| Vec::new()),
        sensors: manifest.sensors.iter().map(|s| (s.name.clone(), Vec::new())).collect(),
        actuators: manifest.actuators.iter().map(|a| (a.name.clone(), Vec::new())).collect(),
        labels: manifest.label.as_ref().map(|_| Vec::new()),
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::data(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(CliError::data(format!("line {line}: {} fields, header has {}", rec.len(), header.len())));
        }
        for ((field, slot), name) in rec.iter().zip(&slots).zip(&header) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| CliError::data(format!("line {line}: column {name}: {field:?} is not a number")))?;
            if !v.is_finite() {
                return Err(CliError::data(format!("line {line}: column {name}: non-finite value {field}")));
            }
            match *slot {
                Slot::Timestamp => ds.timestamp.as_mut().expect("declared").push(v),
                Slot::Sensor(i) => ds.sensors[i].1.push(v),
                Slot::Actuator(i) => ds.actuators[i].1.push(v),
                Slot::Label => {
                    if v != 0.0 && v != 1.0 {
                        return Err(CliError::data(format!("line {line}: label {field} is not 0 or 1")));
                    }
                    ds.labels.as_mut().expect("declared").push(v as u8);
                }
            }
        }
    }
    if ds.is_empty() {
        return Err(CliError::data("no data rows"));
    }
    Ok(ds)
}

/// Windows of every sensor at the manifest's stride; each carries the discretized actuator
/// states of its sensor's scope at its first sample.
pub fn windows(ds: &Dataset, manifest: &Manifest, binnings: &[ActuatorBinning]) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for spec in &manifest.sensors {
        let values = ds.column(&spec.name).expect("ingested");
        let scope: Vec<(&ActuatorBinning, &[f64])> = spec
            .actuators
            .iter()
            .map(|a| {
                let b = binnings
                    .iter()
                    .find(|b| &b.actuator == a)
                    .ok_or_else(|| CliError::data(format!("no binning for actuator {a}")))?;
                Ok((b, ds.column(a).expect("ingested")))
            })
            .collect::<Result<_>>()?;
        let ac_at = |t: usize| ActuatorCombination(scope.iter().map(|(b, col)| b.discretize(col[t])).collect());
        out.extend(slice_windows(&spec.name, values, ac_at, manifest.window, manifest.stride)?);
    }
    Ok(out)
}

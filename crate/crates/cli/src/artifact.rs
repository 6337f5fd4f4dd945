//! The model file: rule bank plus the optional S-A index and semantic bank, in one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use sactx_core::rulelearn::RuleBank;
use sactx_core::saindex::SaIndex;
use sactx_core::semantics::SemanticBank;

use crate::error::{read, write, CliError, Result};
use crate::manifest::Manifest;

pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Model {
    pub version: u32,
    pub rulebank: RuleBank,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sa_index: Option<SaIndex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantics: Option<SemanticBank>,
}

impl Model {
    pub fn new(rulebank: RuleBank) -> Self {
        Self { version: MODEL_VERSION, rulebank, sa_index: None, semantics: None }
    }

    pub fn to_json(&self) -> Result<String> {
        sactx_core::json::to_string(self).map_err(|e| CliError::data(format!("model serialization: {e}")))
    }

    /// Parses and validates a model; nothing is returned unless the whole document checks out.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Probe {
            version: u32,
        }
        let probe: Probe = serde_json::from_str(text).map_err(|e| CliError::data(format!("model: {e}")))?;
        if probe.version != MODEL_VERSION {
            return Err(CliError::data(format!("model version {} (expected {MODEL_VERSION})", probe.version)));
        }
        let m: Model = serde_json::from_str(text).map_err(|e| CliError::data(format!("model: {e}")))?;
        m.rulebank.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, self.to_json()?)
    }

    /// Loads a model and checks that it was learned under `manifest`.
    pub fn load(path: &Path, manifest: &Manifest) -> Result<Self> {
        let m = Self::from_json(&read(path)?).map_err(|e| match e {
            CliError::Data(msg) => CliError::data(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let (have, want) = (&m.rulebank.metadata.manifest_digest, manifest.digest());
        if *have != want {
            return Err(CliError::data(format!(
                "{}: manifest digest mismatch (model {}, manifest {})",
                path.display(),
                &have[..have.len().min(12)],
                &want[..12]
            )));
        }
        Ok(m)
    }

    pub fn require_index(&self) -> Result<&SaIndex> {
        self.sa_index.as_ref().ok_or_else(|| CliError::usage("model has no S-A index; run build-sa-index first"))
    }
}

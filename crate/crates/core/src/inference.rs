//! Online screening: candidate retrieval, envelope and distance checks, arbitration of
//! ambiguous windows, diagnosis, and the system-level OR decision.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::features::{ActuatorCombination, FeatureExtractor, DESCRIPTOR_NAMES};
use crate::provider::{CompletionProvider, ProviderError, Role};
use crate::rulelearn::{ModeRef, ModeRule, RuleBank, Row};
use crate::saindex::{related_actuators, signature_of, SaIndex, Signature, Trend, WeightedSignature};
use crate::scalar::Scalar;
use crate::semantics::{ProviderKind, SemanticBank};
use crate::Window;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    Exact,
    SaFallback,
    Empty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub source: CandidateSource,
    /// Ascending, without duplicates.
    pub modes: Vec<ModeRef>,
}

/// Exact key if learned from enough windows, otherwise the union of the pooled entries of each
/// scoped actuator's current state.
pub fn retrieve_candidates(bank: &RuleBank, index: &SaIndex, sensor: &str, ac: &ActuatorCombination) -> Result<CandidateSet> {
    let meta = bank
        .metadata
        .sensor(sensor)
        .ok_or_else(|| Error::Manifest(format!("unknown sensor {sensor}")))?;
    if meta.actuators.len() != ac.states().len() {
        return Err(Error::Manifest(format!(
            "sensor {sensor} expects {} actuator states, got {}",
            meta.actuators.len(),
            ac.states().len()
        )));
    }
    if let Some(ki) = bank.key_index(sensor, ac) {
        let key = &bank.keys[ki];
        if !key.pooled_only {
            let modes = key.modes.iter().map(|m| ModeRef { key: ki as u32, mode: m.mode_id }).collect();
            return Ok(CandidateSet { source: CandidateSource::Exact, modes });
        }
    }
    let mut modes: Vec<ModeRef> = meta
        .actuators
        .iter()
        .zip(ac.states())
        .filter_map(|(a, &state)| index.entry(sensor, a, state))
        .flat_map(|e| e.modes.iter().copied())
        .collect();
    modes.sort_unstable();
    modes.dedup();
    let source = if modes.is_empty() { CandidateSource::Empty } else { CandidateSource::SaFallback };
    Ok(CandidateSet { source, modes })
}

/// First mode, in the given (ascending) order, whose closed envelope contains `y`.
pub fn envelope_check<T: Scalar>(y: &Row<T>, modes: &[(ModeRef, &ModeRule<T>)]) -> Option<ModeRef> {
    modes.iter().find(|(_, m)| m.envelope.contains(y)).map(|(r, _)| *r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceOutcome<T> {
    pub accepted: bool,
    /// `(mode, d2, theta, margin)` in input order.
    pub per_mode: Vec<(ModeRef, T, T, T)>,
    /// Largest margin, ties to the earliest mode.
    pub best: ModeRef,
    pub best_margin: T,
}

pub fn distance_check<T: Scalar>(y: &Row<T>, modes: &[(ModeRef, &ModeRule<T>)], rho: T) -> Result<DistanceOutcome<T>> {
    if modes.is_empty() {
        return Err(Error::usage("distance check without candidate modes"));
    }
    let per_mode: Vec<(ModeRef, T, T, T)> = modes
        .iter()
        .map(|(r, m)| {
            let d2 = m.distance.d2(y);
            (*r, d2, m.distance.theta, m.distance.theta * (T::one() + rho) - d2)
        })
        .collect();
    let mut best = 0;
    for (i, p) in per_mode.iter().enumerate() {
        if p.3 > per_mode[best].3 {
            best = i;
        }
    }
    Ok(DistanceOutcome {
        accepted: per_mode[best].3 >= T::zero(),
        best: per_mode[best].0,
        best_margin: per_mode[best].3,
        per_mode,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Normal,
    Anomaly,
}

impl Decision {
    pub fn is_anomaly(self) -> bool {
        self == Decision::Anomaly
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Normal => "normal",
            Decision::Anomaly => "anomaly",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Path {
    Envelope,
    Distance,
    Arbiter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolatedDim {
    pub dim: usize,
    pub name: String,
    pub observed: f64,
    pub lo: f64,
    pub hi: f64,
    /// Clipped standardized deviation under the best mode's distance model.
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub sensor: String,
    pub start: usize,
    pub decision: Decision,
    /// Screening was inconclusive and the decision came from arbitration.
    pub ambiguous: bool,
    pub path: Path,
    pub source: CandidateSource,
    pub best_mode: Option<ModeRef>,
    pub margin: Option<f64>,
    /// `min d2 / theta` over candidates when the distance stage ran.
    pub score: Option<f64>,
    pub violated_dims: Vec<ViolatedDim>,
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub actuator: String,
    pub state: u8,
    pub r: f64,
    pub text: Option<String>,
    /// Dominant pooled signature, the one the text describes.
    pub expected: Option<Signature>,
    /// Full pooled signature distribution of the actuator's current state.
    pub pooled: Vec<WeightedSignature>,
}

impl Expectation {
    /// Pooled weight of signatures sharing the observed level band and trend.
    pub fn support_for(&self, observed: &Signature) -> f64 {
        self.pooled
            .iter()
            .filter(|w| w.signature.level_bin == observed.level_bin && w.signature.trend == observed.trend)
            .map(|w| w.weight)
            .sum()
    }

    /// Pooled weight of signatures in the observed level band, whatever their trend.
    pub fn band_support(&self, observed: &Signature) -> f64 {
        self.pooled.iter().filter(|w| w.signature.level_bin == observed.level_bin).map(|w| w.weight).sum()
    }
}

/// An actuator state whose pooled weight on the observed (level band, trend) category falls
/// below this is inconsistent with the window.
pub const CONSISTENT_WEIGHT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub name: String,
    pub observed: f64,
    pub z: f64,
}

/// Everything diagnosis and arbitration may look at for one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub sensor: String,
    pub start: usize,
    pub actuator_states: Vec<(String, u8)>,
    pub verdict: Option<Verdict>,
    pub observed: Signature,
    /// Related actuators, strongest first, with their expectations for the current state.
    pub related: Vec<Expectation>,
    /// Per-dimension deviations against the best candidate mode.
    pub deviations: Vec<Deviation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbiguousCase {
    pub evidence: EvidenceBundle,
    pub candidates: CandidateSet,
    /// `(mode, d2 / theta)` for every candidate.
    pub ratios: Vec<(ModeRef, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Screened {
    Definitive(Verdict),
    Ambiguous(Box<AmbiguousCase>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScreenConfig {
    pub rho: f64,
    pub rho_arb: f64,
    /// Send sa_fallback windows that no candidate accepts to arbitration instead of flagging them.
    pub arbitrate_fallback: bool,
    pub theta_amb: f64,
    /// Decision of the deterministic arbiter when there are no candidates.
    pub empty_decision: Decision,
    pub related_k: usize,
    pub r_min: f64,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self {
            rho: 0.1,
            rho_arb: 0.5,
            arbitrate_fallback: true,
            theta_amb: 0.0,
            empty_decision: Decision::Anomaly,
            related_k: 5,
            r_min: 0.1,
        }
    }
}

/// Loaded artifacts plus the feature extractor; immutable and shareable across threads.
pub struct Detector<'a> {
    pub bank: &'a RuleBank,
    pub index: &'a SaIndex,
    pub semantics: Option<&'a SemanticBank>,
    pub cfg: ScreenConfig,
    extractor: FeatureExtractor<f64>,
}

impl<'a> Detector<'a> {
    pub fn new(bank: &'a RuleBank, index: &'a SaIndex, semantics: Option<&'a SemanticBank>, cfg: ScreenConfig) -> Result<Self> {
        Ok(Self { bank, index, semantics, cfg, extractor: FeatureExtractor::new(bank.metadata.window)? })
    }

    fn resolve(&self, set: &CandidateSet) -> Result<Vec<(ModeRef, &'a ModeRule<f64>)>> {
        set.modes
            .iter()
            .map(|&r| {
                self.bank
                    .mode(r)
                    .map(|m| (r, m))
                    .ok_or_else(|| Error::data(format!("candidate {r:?} not in the rule bank")))
            })
            .collect()
    }

    /// Deterministic screening of one window.
    pub fn screen_window(&self, w: &Window) -> Result<Screened> {
        let d = self.extractor.descriptor(&w.values).map_err(|e| match e {
            Error::NonFinite { index } => {
                Error::data(format!("non-finite sample of {} at index {}", w.sensor_id, w.start_index + index))
            }
            other => other,
        })?;
        let y = d.to_array();
        let candidates = retrieve_candidates(self.bank, self.index, &w.sensor_id, &w.ac)?;
        let modes = self.resolve(&candidates)?;
        let mut verdict = Verdict {
            sensor: w.sensor_id.clone(),
            start: w.start_index,
            decision: Decision::Normal,
            ambiguous: false,
            path: Path::Envelope,
            source: candidates.source,
            best_mode: None,
            margin: None,
            score: None,
            violated_dims: Vec::new(),
            reason: None,
        };
        if modes.is_empty() {
            verdict.reason = Some("no matching context".into());
            let evidence = self.evidence(w, &y, None, None)?;
            return Ok(Screened::Ambiguous(Box::new(AmbiguousCase { evidence, candidates, ratios: Vec::new() })));
        }
        if let Some(r) = envelope_check(&y, &modes) {
            verdict.best_mode = Some(r);
            return Ok(Screened::Definitive(verdict));
        }

        let dist = distance_check(&y, &modes, self.cfg.rho)?;
        let best = self.bank.mode(dist.best).expect("resolved above");
        verdict.path = Path::Distance;
        verdict.best_mode = Some(dist.best);
        verdict.margin = Some(dist.best_margin);
        verdict.score = dist.per_mode.iter().map(|p| p.1 / p.2).reduce(f64::min);
        verdict.violated_dims = violations(&y, best);
        if dist.accepted {
            return Ok(Screened::Definitive(verdict));
        }
        verdict.decision = Decision::Anomaly;
        let defer = candidates.source == CandidateSource::SaFallback
            && self.cfg.arbitrate_fallback
            && dist.best_margin < -self.cfg.theta_amb;
        if defer {
            let ratios = dist.per_mode.iter().map(|p| (p.0, p.1 / p.2)).collect();
            let evidence = self.evidence(w, &y, Some(best), None)?;
            return Ok(Screened::Ambiguous(Box::new(AmbiguousCase { evidence, candidates, ratios })));
        }
        Ok(Screened::Definitive(verdict))
    }

    /// Evidence for a window; `verdict` is attached when the screen was definitive.
    pub fn evidence(&self, w: &Window, y: &Row<f64>, best: Option<&ModeRule<f64>>, verdict: Option<&Verdict>) -> Result<EvidenceBundle> {
        let meta = self
            .bank
            .metadata
            .sensor(&w.sensor_id)
            .ok_or_else(|| Error::Manifest(format!("unknown sensor {}", w.sensor_id)))?;
        let observed = signature_of(
            &crate::features::Descriptor13::from_array(y),
            meta.range,
            self.bank.metadata.window,
            &self.index.signature_params,
        )?;
        let actuator_states: Vec<(String, u8)> = meta.actuators.iter().cloned().zip(w.ac.states().iter().copied()).collect();
        let related = related_actuators(self.index, &w.sensor_id, self.cfg.related_k, self.cfg.r_min)
            .into_iter()
            .filter_map(|(a, r)| {
                let state = actuator_states.iter().find(|(n, _)| *n == a)?.1;
                let rule = self.semantics.and_then(|s| s.get(&w.sensor_id, &a, state));
                let pooled = self.index.entry(&w.sensor_id, &a, state).map(|e| e.signatures.clone()).unwrap_or_default();
                Some(Expectation {
                    actuator: a,
                    state,
                    r,
                    text: rule.map(|x| x.text.clone()),
                    expected: rule.map(|x| x.attributes.signature()),
                    pooled,
                })
            })
            .collect();
        let deviations = match best {
            Some(m) => {
                let u = m.distance.components(y);
                DESCRIPTOR_NAMES
                    .iter()
                    .zip(y.iter().zip(u.iter()))
                    .map(|(n, (&o, &z))| Deviation { name: n.to_string(), observed: o, z })
                    .collect()
            }
            None => Vec::new(),
        };
        Ok(EvidenceBundle {
            sensor: w.sensor_id.clone(),
            start: w.start_index,
            actuator_states,
            verdict: verdict.cloned(),
            observed,
            related,
            deviations,
        })
    }

    /// Screens every window in parallel; output order follows `(start, sensor)`.
    pub fn screen_batch(&self, windows: &[Window]) -> Result<Vec<Screened>> {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.sort_by(|&a, &b| (windows[a].start_index, &windows[a].sensor_id).cmp(&(windows[b].start_index, &windows[b].sensor_id)));
        order.par_iter().map(|&i| self.screen_window(&windows[i])).collect()
    }
}

fn violations(y: &Row<f64>, mode: &ModeRule<f64>) -> Vec<ViolatedDim> {
    let u = mode.distance.components(y);
    mode.envelope
        .violations(y)
        .into_iter()
        .map(|j| ViolatedDim {
            dim: j,
            name: DESCRIPTOR_NAMES[j].to_string(),
            observed: y[j],
            lo: mode.envelope.lo[j],
            hi: mode.envelope.hi[j],
            z: u[j],
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suspect {
    pub actuator: String,
    pub state: u8,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub narrative: String,
    pub suspects: Vec<Suspect>,
    pub final_decision: Decision,
    pub provider: ProviderKind,
    /// Why a provider answer was not used.
    pub rejection: Option<String>,
    pub transport_failed: bool,
}

fn parse_decision(v: &Value) -> Option<Decision> {
    match v.as_str()?.trim().to_ascii_lowercase().as_str() {
        "normal" => Some(Decision::Normal),
        "anomaly" | "anomalous" => Some(Decision::Anomaly),
        _ => None,
    }
}

fn apply_provider_failure(diag: &mut Diagnosis, err: ProviderError) {
    diag.transport_failed = matches!(err, ProviderError::Transport { .. } | ProviderError::Config(_));
    diag.rejection = Some(err.to_string());
}

/// Final decision for an ambiguous window.
///
/// The deterministic rule accepts when some candidate has `d2 / theta <= 1 + rho_arb`; with no
/// candidates it returns `cfg.empty_decision`. A provider must answer with a JSON object
/// `{"decision": "normal"|"anomaly", "narrative": "..."}`; anything else falls back to the rule.
pub fn arbitrate_fallback(case: &AmbiguousCase, cfg: &ScreenConfig, provider: Option<&dyn CompletionProvider>) -> (Verdict, Diagnosis) {
    let best = case
        .ratios
        .iter()
        .copied()
        .reduce(|a, b| if b.1 < a.1 { b } else { a });
    let (decision, narrative) = match best {
        None => (cfg.empty_decision, "no matching context".to_string()),
        Some((r, ratio)) if ratio <= 1.0 + cfg.rho_arb => {
            (Decision::Normal, format!("closest pooled mode {}:{} at d2/theta {ratio:.3}, within tolerance", r.key, r.mode))
        }
        Some((r, ratio)) => {
            (Decision::Anomaly, format!("closest pooled mode {}:{} at d2/theta {ratio:.3}, beyond tolerance", r.key, r.mode))
        }
    };
    let mut diag = Diagnosis {
        narrative,
        suspects: Vec::new(),
        final_decision: decision,
        provider: ProviderKind::Template,
        rejection: None,
        transport_failed: false,
    };
    if let Some(p) = provider {
        let payload = json!({
            "task": "arbitrate",
            "evidence": case.evidence,
            "candidates": case.ratios.iter().map(|(r, x)| json!({"key": r.key, "mode": r.mode, "d2_over_theta": x})).collect::<Vec<_>>(),
            "instructions": "Decide whether this sensor window is normal or anomalous given the evidence. \
                             Answer with a JSON object {\"decision\": \"normal\" or \"anomaly\", \"narrative\": \"...\"}.",
        });
        match p.complete(Role::Secondary, &payload) {
            Ok(text) => match serde_json::from_str::<Value>(text.trim()) {
                Ok(v) => match (v.get("decision").and_then(parse_decision), v.get("narrative").and_then(Value::as_str)) {
                    (Some(d), Some(n)) if !n.trim().is_empty() => {
                        diag.final_decision = d;
                        diag.narrative = n.trim().to_string();
                        diag.provider = ProviderKind::Llm;
                    }
                    _ => diag.rejection = Some("arbitration answer lacks a valid decision or narrative".into()),
                },
                Err(e) => diag.rejection = Some(format!("arbitration answer is not JSON: {e}")),
            },
            Err(e) => apply_provider_failure(&mut diag, e),
        }
    }
    let e = &case.evidence;
    let verdict = Verdict {
        sensor: e.sensor.clone(),
        start: e.start,
        decision: diag.final_decision,
        ambiguous: true,
        path: Path::Arbiter,
        source: case.candidates.source,
        best_mode: best.map(|b| b.0),
        margin: None,
        score: best.map(|b| b.1),
        violated_dims: Vec::new(),
        reason: Some(diag.narrative.clone()),
    };
    (verdict, diag)
}

/// Template diagnosis: related actuators whose current state rarely produced the observed level
/// band and trend in training. The least plausible state comes first (exact category weight, then
/// weight of the level band alone); relatedness and name break ties.
pub fn template_suspects(evidence: &EvidenceBundle) -> Vec<Suspect> {
    let o = &evidence.observed;
    let mut picked: Vec<(&Expectation, f64, f64)> = evidence
        .related
        .iter()
        .map(|x| (x, x.support_for(o), x.band_support(o)))
        .filter(|&(_, w, _)| w < CONSISTENT_WEIGHT)
        .collect();
    picked.sort_by(|a, b| {
        a.1.total_cmp(&b.1)
            .then(a.2.total_cmp(&b.2))
            .then(b.0.r.total_cmp(&a.0.r))
            .then_with(|| a.0.actuator.cmp(&b.0.actuator))
    });
    picked.into_iter().map(|(x, _, _)| Suspect { actuator: x.actuator.clone(), state: x.state, r: x.r }).collect()
}

fn trend_phrase(t: Trend) -> &'static str {
    match t {
        Trend::Increase => "rises",
        Trend::Decrease => "falls",
        Trend::Maintain => "holds steady",
    }
}

/// Explains a definitive verdict without changing it.
pub fn diagnose(verdict: &Verdict, evidence: &EvidenceBundle, provider: Option<&dyn CompletionProvider>) -> Diagnosis {
    let suspects = if verdict.decision.is_anomaly() { template_suspects(evidence) } else { Vec::new() };
    let o = &evidence.observed;
    let narrative = match (verdict.decision, suspects.first()) {
        (Decision::Normal, _) => format!(
            "{} window at {} is consistent with learned behavior for the current actuator states.",
            verdict.sensor, verdict.start
        ),
        (Decision::Anomaly, Some(s)) => {
            let expected = evidence
                .related
                .iter()
                .find(|x| x.actuator == s.actuator)
                .and_then(|x| x.text.clone())
                .unwrap_or_default();
            format!(
                "{} {} in level band {} with {} variability from sample {}, which conflicts most with the \
                 expectation for {}={} (r={:.2}). {}",
                verdict.sensor,
                trend_phrase(o.trend),
                o.level_bin,
                o.variability,
                verdict.start,
                s.actuator,
                s.state,
                s.r,
                expected
            )
            .trim_end()
            .to_string()
        }
        (Decision::Anomaly, None) => format!(
            "{} window at {} deviates from every learned mode ({} in level band {}), but no related actuator \
             expectation conflicts with it.",
            verdict.sensor,
            verdict.start,
            trend_phrase(o.trend),
            o.level_bin
        ),
    };
    let mut diag = Diagnosis {
        narrative,
        suspects,
        final_decision: verdict.decision,
        provider: ProviderKind::Template,
        rejection: None,
        transport_failed: false,
    };
    if let Some(p) = provider {
        let payload = json!({
            "task": "diagnose",
            "evidence": evidence,
            "detector_decision": verdict.decision,
            "instructions": "Explain the detector decision using the evidence. Name the related actuators whose \
                             expectations conflict most with the observation. Answer with a JSON object \
                             {\"narrative\": \"...\", \"suspects\": [\"actuator\", ...]}.",
        });
        match p.complete(Role::Secondary, &payload) {
            Ok(text) => match serde_json::from_str::<Value>(text.trim()) {
                Ok(v) => {
                    if let Some(n) = v.get("narrative").and_then(Value::as_str).filter(|n| !n.trim().is_empty()) {
                        diag.narrative = n.trim().to_string();
                        diag.provider = ProviderKind::Llm;
                        if let Some(list) = v.get("suspects").and_then(Value::as_array) {
                            let named: Vec<Suspect> = list
                                .iter()
                                .filter_map(Value::as_str)
                                .filter_map(|a| evidence.related.iter().find(|x| x.actuator == a))
                                .map(|x| Suspect { actuator: x.actuator.clone(), state: x.state, r: x.r })
                                .collect();
                            if !named.is_empty() {
                                diag.suspects = named;
                            }
                        }
                        if v.get("decision").and_then(parse_decision).is_some_and(|d| d != verdict.decision) {
                            diag.rejection = Some("provider decision ignored: diagnosis cannot change the verdict".into());
                        }
                    } else {
                        diag.rejection = Some("diagnosis answer lacks a narrative".into());
                    }
                }
                Err(e) => diag.rejection = Some(format!("diagnosis answer is not JSON: {e}")),
            },
            Err(e) => apply_provider_failure(&mut diag, e),
        }
    }
    diag.final_decision = verdict.decision;
    diag
}

/// OR over sensor decisions; an empty set is normal.
pub fn system_decision(decisions: &[Decision]) -> Decision {
    if decisions.iter().any(|d| d.is_anomaly()) {
        Decision::Anomaly
    } else {
        Decision::Normal
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemVerdict {
    pub start: usize,
    pub decision: Decision,
    pub anomalous_sensors: Vec<String>,
}

/// One system verdict per window start, ascending.
pub fn system_verdicts(verdicts: &[Verdict]) -> Vec<SystemVerdict> {
    let mut by_start: BTreeMap<usize, Vec<&Verdict>> = BTreeMap::new();
    for v in verdicts {
        by_start.entry(v.start).or_default().push(v);
    }
    by_start
        .into_iter()
        .map(|(start, vs)| {
            let decisions: Vec<Decision> = vs.iter().map(|v| v.decision).collect();
            let mut anomalous_sensors: Vec<String> = vs.iter().filter(|v| v.decision.is_anomaly()).map(|v| v.sensor.clone()).collect();
            anomalous_sensors.sort();
            SystemVerdict { start, decision: system_decision(&decisions), anomalous_sensors }
        })
        .collect()
}

/// A final per-window result: the verdict after arbitration, with its explanation if requested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub verdict: Verdict,
    pub diagnosis: Option<Diagnosis>,
}

#[derive(Clone, Copy, Default)]
pub struct Providers<'p> {
    pub arbiter: Option<&'p dyn CompletionProvider>,
    pub diagnosis: Option<&'p dyn CompletionProvider>,
}

/// Screens, arbitrates ambiguous windows and, when `explain` is set, diagnoses anomalies.
pub fn detect(detector: &Detector<'_>, windows: &[Window], providers: Providers<'_>, explain: bool) -> Result<Vec<Outcome>> {
    let screened = detector.screen_batch(windows)?;
    let by_key: BTreeMap<(usize, &str), &Window> = windows.iter().map(|w| ((w.start_index, w.sensor_id.as_str()), w)).collect();
    screened
        .into_par_iter()
        .map(|s| match s {
            Screened::Definitive(v) => {
                let diagnosis = if explain && v.decision.is_anomaly() {
                    let w = by_key[&(v.start, v.sensor.as_str())];
                    let d = detector.extractor.descriptor(&w.values)?.to_array();
                    let best = v.best_mode.and_then(|r| detector.bank.mode(r));
                    let ev = detector.evidence(w, &d, best, Some(&v))?;
                    Some(diagnose(&v, &ev, providers.diagnosis))
                } else {
                    None
                };
                Ok(Outcome { verdict: v, diagnosis })
            }
            Screened::Ambiguous(case) => {
                let (verdict, diag) = arbitrate_fallback(&case, &detector.cfg, providers.arbiter);
                Ok(Outcome { verdict, diagnosis: explain.then_some(diag) })
            }
        })
        .collect()
}

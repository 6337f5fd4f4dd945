//! Per-actuator semantic expectations.
//!
//! For every related `(sensor, actuator, state)` the dominant pooled signature is turned into a
//! one-sentence expectation, either by a fixed template or by a completion provider whose answer
//! is validated and replaced by the template text when it does not pass.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{dim, DESCRIPTOR_NAMES};
use crate::provider::{CompletionProvider, ProviderError, Role};
use crate::rulelearn::{ModeRef, ModeRule, RuleBank};
use crate::saindex::{signature_of, SaIndex, SaKey, Shape, Signature, SignatureParams, Trend, Variability};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub amp: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeSummary {
    pub level: LevelSummary,
    pub level_bin: u8,
    pub trend: Trend,
    pub variability: Variability,
    pub shape: Shape,
}

impl AttributeSummary {
    pub fn signature(&self) -> Signature {
        Signature { level_bin: self.level_bin, trend: self.trend, variability: self.variability, shape: self.shape }
    }
}

/// Level from the mode's median `f_mean` bounded by its `f_min`/`f_max` envelope quantiles;
/// categories exactly as the mode's signature.
pub fn summarize_attributes(mode: &ModeRule<f64>, range: [f64; 2], window: usize, p: &SignatureParams) -> Result<AttributeSummary> {
    let center = mode.distance.center();
    let sig = signature_of(&center, range, window, p)?;
    Ok(AttributeSummary {
        level: LevelSummary {
            mean: center.core.mean,
            lo: mode.envelope.lo[dim::MIN],
            hi: mode.envelope.hi[dim::MAX],
            amp: center.core.amp,
        },
        level_bin: sig.level_bin,
        trend: sig.trend,
        variability: sig.variability,
        shape: sig.shape,
    })
}

fn trend_verb(t: Trend) -> &'static str {
    match t {
        Trend::Increase => "increases",
        Trend::Decrease => "decreases",
        Trend::Maintain => "holds steady",
    }
}

/// What an expectation is conditioned on: actuator assignments of one sensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Condition<'a> {
    pub sensor: &'a str,
    pub assignments: Vec<(&'a str, u8)>,
}

impl fmt::Display for Condition<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (a, s)) in self.assignments.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}={s}")?;
        }
        Ok(())
    }
}

pub fn render_template_text(summary: &AttributeSummary, target: &Condition<'_>) -> String {
    format!(
        "Under {target}, {} typically {} within [{:.2}, {:.2}] (mean {:.2}), with {} variability and {} dynamics.",
        target.sensor,
        trend_verb(summary.trend),
        summary.level.lo,
        summary.level.hi,
        summary.level.mean,
        summary.variability,
        summary.shape,
    )
}

/// Number of sentences: runs of text closed by `.`, `!` or `?` followed by whitespace or the end.
pub fn sentence_count(text: &str) -> usize {
    let chars: Vec<char> = text.trim().chars().collect();
    let mut count = 0;
    let mut open = false;
    for (i, &c) in chars.iter().enumerate() {
        if matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|n| n.is_whitespace()) {
            if open {
                count += 1;
            }
            open = false;
        } else if !c.is_whitespace() {
            open = true;
        }
    }
    count + open as usize
}

/// Accepts non-empty answers of at most two sentences.
pub fn validate_text(text: &str) -> std::result::Result<String, String> {
    let t = text.trim();
    if t.is_empty() {
        return Err("empty response".into());
    }
    let n = sentence_count(t);
    if n > 2 {
        return Err(format!("{n} sentences (at most 2 allowed)"));
    }
    Ok(t.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Template,
    Llm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticRule {
    pub target: SaKey,
    pub text: String,
    pub attributes: AttributeSummary,
    /// Which provider produced `text`.
    pub provider: ProviderKind,
    /// SHA-256 of the prompt payload.
    pub provider_digest: String,
    /// Why a provider answer was discarded in favor of the template text.
    pub rejection: Option<String>,
    pub representative: ModeRef,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SemanticBank {
    /// Ascending by target.
    pub rules: Vec<SemanticRule>,
}

impl SemanticBank {
    pub fn get(&self, sensor: &str, actuator: &str, state: u8) -> Option<&SemanticRule> {
        self.rules
            .binary_search_by(|r| {
                (r.target.sensor.as_str(), r.target.actuator.as_str(), r.target.state).cmp(&(sensor, actuator, state))
            })
            .ok()
            .map(|i| &self.rules[i])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticConfig {
    pub r_min: f64,
    pub max_in_flight: usize,
    pub instructions: String,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        Self {
            r_min: 0.1,
            max_in_flight: 4,
            instructions: "Describe in one sentence how the sensor is expected to behave while the actuator is in this \
                           state, using only the attributes and statistics given. Mention level range, trend, \
                           variability and shape."
                .into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticOutcome {
    pub bank: SemanticBank,
    /// Entries whose provider call failed in transport; they carry template text.
    pub transport_failures: Vec<(SaKey, ProviderError)>,
}

struct Job<'a> {
    key: SaKey,
    summary: AttributeSummary,
    representative: ModeRef,
    mode: &'a ModeRule<f64>,
}

/// The prompt payload for one expectation.
pub fn prompt_payload(key: &SaKey, summary: &AttributeSummary, mode: &ModeRule<f64>, instructions: &str) -> Value {
    let center = mode.distance.center().to_array();
    let stats: serde_json::Map<String, Value> =
        DESCRIPTOR_NAMES.iter().zip(center.iter()).map(|(n, v)| (n.to_string(), json!(v))).collect();
    json!({
        "sensor": key.sensor,
        "actuator": key.actuator,
        "state": key.state,
        "attributes": summary,
        "representative_stats": {
            "support": mode.support,
            "median_descriptor": stats,
            "envelope_lo": mode.envelope.lo.to_vec(),
            "envelope_hi": mode.envelope.hi.to_vec(),
        },
        "instructions": instructions,
    })
}

fn digest(payload: &Value) -> String {
    let bytes = crate::json::to_vec(payload).expect("JSON values serialize");
    hex::encode(Sha256::digest(&bytes))
}

/// Dominant signature (highest pooled weight, ties to the smaller signature) of an entry and the
/// highest-support mode carrying it (ties to the lowest reference).
fn dominant<'a>(bank: &'a RuleBank, index: &SaIndex, key: &SaKey) -> Result<Option<(ModeRef, &'a ModeRule<f64>)>> {
    let Some(entry) = index.entry(&key.sensor, &key.actuator, key.state) else {
        return Ok(None);
    };
    let Some(top) = entry
        .signatures
        .iter()
        .min_by(|a, b| b.weight.partial_cmp(&a.weight).unwrap_or(std::cmp::Ordering::Equal).then(a.signature.cmp(&b.signature)))
    else {
        return Ok(None);
    };
    let meta = bank
        .metadata
        .sensor(&key.sensor)
        .ok_or_else(|| Error::Manifest(format!("sensor {} missing from bank metadata", key.sensor)))?;
    let mut best: Option<(ModeRef, &ModeRule<f64>)> = None;
    for &r in &entry.modes {
        let mode = bank.mode(r).ok_or_else(|| Error::data(format!("index references missing mode {r:?}")))?;
        if signature_of(&mode.distance.center(), meta.range, bank.metadata.window, &index.signature_params)? != top.signature {
            continue;
        }
        if best.is_none_or(|(_, m)| mode.support > m.support) {
            best = Some((r, mode));
        }
    }
    Ok(best)
}

/// One expectation per `(s, a, A)` entry whose pair has `r(s, a) >= r_min`.
pub fn generate_semantic_bank(
    bank: &RuleBank,
    index: &SaIndex,
    cfg: &SemanticConfig,
    provider: Option<&dyn CompletionProvider>,
) -> Result<SemanticOutcome> {
    let mut jobs = Vec::new();
    for entry in &index.entries {
        if index.r(&entry.sensor, &entry.actuator) < cfg.r_min {
            continue;
        }
        let key = entry.key();
        let Some((representative, mode)) = dominant(bank, index, &key)? else {
            continue;
        };
        let meta = bank.metadata.sensor(&key.sensor).expect("checked by dominant");
        let summary = summarize_attributes(mode, meta.range, bank.metadata.window, &index.signature_params)?;
        jobs.push(Job { key, summary, representative, mode });
    }

    let results: Vec<(SemanticRule, Option<ProviderError>)> = match provider {
        None => jobs.iter().map(|j| (finish(j, cfg, None), None)).collect(),
        Some(p) => fan_out(&jobs, cfg, p),
    };
    let mut outcome = SemanticOutcome { bank: SemanticBank::default(), transport_failures: Vec::new() };
    for (rule, err) in results {
        if let Some(e) = err {
            outcome.transport_failures.push((rule.target.clone(), e));
        }
        outcome.bank.rules.push(rule);
    }
    outcome.bank.rules.sort_by(|a, b| a.target.cmp(&b.target));
    Ok(outcome)
}

fn finish(job: &Job<'_>, cfg: &SemanticConfig, answer: Option<std::result::Result<String, ProviderError>>) -> SemanticRule {
    let payload = prompt_payload(&job.key, &job.summary, job.mode, &cfg.instructions);
    let condition = Condition { sensor: &job.key.sensor, assignments: vec![(&job.key.actuator, job.key.state)] };
    let template = render_template_text(&job.summary, &condition);
    let (text, provider, rejection) = match answer {
        None => (template, ProviderKind::Template, None),
        Some(Ok(raw)) => match validate_text(&raw) {
            Ok(t) => (t, ProviderKind::Llm, None),
            Err(why) => (template, ProviderKind::Template, Some(why)),
        },
        Some(Err(e)) => (template, ProviderKind::Template, Some(e.to_string())),
    };
    SemanticRule {
        target: job.key.clone(),
        text,
        attributes: job.summary,
        provider,
        provider_digest: digest(&payload),
        rejection,
        representative: job.representative,
    }
}

type Generated = (SemanticRule, Option<ProviderError>);

fn fan_out(jobs: &[Job<'_>], cfg: &SemanticConfig, provider: &dyn CompletionProvider) -> Vec<Generated> {
    let next = AtomicUsize::new(0);
    let workers = cfg.max_in_flight.clamp(1, jobs.len().max(1));
    let mut slots: Vec<Option<Generated>> = Vec::new();
    slots.resize_with(jobs.len(), || None);
    let collected: Vec<Vec<(usize, Generated)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        let Some(job) = jobs.get(i) else { break };
                        let payload = prompt_payload(&job.key, &job.summary, job.mode, &cfg.instructions);
                        let answer = provider.complete(Role::Primary, &payload);
                        let transport = match &answer {
                            Err(e @ ProviderError::Transport { .. }) | Err(e @ ProviderError::Config(_)) => Some(e.clone()),
                            _ => None,
                        };
                        out.push((i, (finish(job, cfg, Some(answer)), transport)));
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("semantic worker panicked")).collect()
    });
    for (i, r) in collected.into_iter().flatten() {
        slots[i] = Some(r);
    }
    slots.into_iter().map(|s| s.expect("every job ran")).collect()
}

/// Fills every mode's `semantic_text` with the template sentence for its full context.
pub fn annotate_modes(bank: &mut RuleBank, p: &SignatureParams) -> Result<()> {
    let window = bank.metadata.window;
    let sensors = bank.metadata.sensors.clone();
    for key in &mut bank.keys {
        let meta = sensors
            .iter()
            .find(|s| s.sensor == key.sensor)
            .ok_or_else(|| Error::Manifest(format!("sensor {} missing from bank metadata", key.sensor)))?;
        let condition = Condition {
            sensor: &meta.sensor,
            assignments: meta.actuators.iter().map(String::as_str).zip(key.ac.states().iter().copied()).collect(),
        };
        for mode in &mut key.modes {
            let summary = summarize_attributes(mode, meta.range, window, p)?;
            mode.semantic_text = Some(render_template_text(&summary, &condition));
        }
    }
    Ok(())
}

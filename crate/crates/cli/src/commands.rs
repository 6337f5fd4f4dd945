//! Subcommand implementations. Each returns a one-line summary for stdout.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use sactx_core::inference::{detect, system_verdicts, Detector, Outcome, Providers};
use sactx_core::rulelearn::learn_rulebank;
use sactx_core::saindex::build_sa_index;
use sactx_core::semantics::generate_semantic_bank;
use sactx_core::simulator::{run_simulation, AttackKind, AttackSpec, PlantConfig, Trace};
use sactx_llm::HttpProvider;

use crate::artifact::Model;
use crate::config::Config;
use crate::data::{ingest_csv, windows, Dataset};
use crate::error::{read, write, CliError, Result};
use crate::manifest::Manifest;
use crate::metrics::{compute_metrics, RunMetrics};
use crate::report::{emit_report, metrics_json, parse_verdicts, verdicts_jsonl};

/// `kind:start:end[:magnitude]`, e.g. `force_valve_open:3000:3600`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackArg(pub AttackSpec);

impl FromStr for AttackArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(format!("expected kind:start:end[:magnitude], got {s:?}"));
        }
        let kind: AttackKind = serde_json::from_value(serde_json::Value::String(parts[0].into()))
            .map_err(|_| format!("unknown attack kind {:?} (force_valve_open, freeze_sensor, bias_sensor)", parts[0]))?;
        let num = |p: &str| p.parse::<usize>().map_err(|e| format!("{p:?}: {e}"));
        let mut spec = AttackSpec::new(kind, num(parts[1])?, num(parts[2])?);
        if let Some(m) = parts.get(3) {
            spec.magnitude = m.parse().map_err(|e| format!("{m:?}: {e}"))?;
        }
        Ok(AttackArg(spec))
    }
}

pub fn simulate(cfg: &Config, duration: usize, attacks: &[AttackSpec], out: &Path, manifest_out: Option<&Path>) -> Result<String> {
    let trace = simulate_trace(cfg.seed, duration, attacks)?;
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).map_err(|e| CliError::io(out, e))?;
    write(out, buf)?;
    if let Some(p) = manifest_out {
        write(p, Manifest::simulator().to_toml())?;
    }
    let attacked = trace.label.iter().filter(|&&l| l != 0).count();
    Ok(format!("wrote {} samples ({attacked} under attack) to {}", trace.len(), out.display()))
}

pub fn simulate_trace(seed: u64, duration: usize, attacks: &[AttackSpec]) -> Result<Trace> {
    Ok(run_simulation(&PlantConfig { seed, ..PlantConfig::default() }, duration, attacks)?)
}

/// Learns the rule bank from a normal-operation dataset.
pub fn learn(cfg: &Config, manifest: &Manifest, train: &Dataset) -> Result<Model> {
    let col = |c: &str| train.column(c).expect("ingested").to_vec();
    let binnings = manifest.binnings(col)?;
    let sensors = manifest.sensor_meta(col);
    let ws = windows(train, manifest, &binnings)?;
    let bank = learn_rulebank(&ws, &sensors, &binnings, &manifest.digest(), &cfg.learn_config(manifest.window))?;
    Ok(Model::new(bank))
}

pub fn learn_rules(cfg: &Config, manifest: &Path, data: &Path, out: &Path) -> Result<String> {
    let m = Manifest::load(manifest)?;
    let ds = ingest_csv(data, &m)?;
    let model = learn(cfg, &m, &ds)?;
    model.save(out)?;
    Ok(format!(
        "learned {} modes over {} contexts; wrote {}",
        model.rulebank.n_modes(),
        model.rulebank.keys.len(),
        out.display()
    ))
}

pub fn index_model(cfg: &Config, model: &mut Model) -> Result<()> {
    let bank = &model.rulebank;
    model.sa_index = Some(build_sa_index(bank, &bank.metadata.binnings, &cfg.signature_params(), cfg.index.aggregation)?);
    // Expectations were written against the old index.
    model.semantics = None;
    Ok(())
}

pub fn build_index(cfg: &Config, manifest: &Path, model_path: &Path, out: Option<&Path>) -> Result<String> {
    let m = Manifest::load(manifest)?;
    let mut model = Model::load(model_path, &m)?;
    index_model(cfg, &mut model)?;
    let out = out.unwrap_or(model_path);
    model.save(out)?;
    let idx = model.require_index()?;
    Ok(format!("indexed {} entries, {} sensor-actuator pairs; wrote {}", idx.entries.len(), idx.relatedness.len(), out.display()))
}

/// The live provider, or `None` when running offline.
pub fn provider(cfg: &Config) -> Result<Option<HttpProvider>> {
    if cfg.provider.offline {
        return Ok(None);
    }
    Ok(Some(HttpProvider::new(cfg.provider.clone())?))
}

fn write_audit(p: &HttpProvider, path: Option<&Path>) -> Result<()> {
    let Some(path) = path else { return Ok(()) };
    let mut out = String::new();
    for r in p.take_records() {
        out += &serde_json::to_string(&r).expect("records serialize");
        out.push('\n');
    }
    write(path, out)
}

pub fn gen_semantics(cfg: &Config, manifest: &Path, model_path: &Path, out: Option<&Path>, audit: Option<&Path>) -> Result<String> {
    let m = Manifest::load(manifest)?;
    let mut model = Model::load(model_path, &m)?;
    let live = provider(cfg)?;
    let generated = generate_semantic_bank(
        &model.rulebank,
        model.require_index()?,
        &cfg.semantic_config(),
        live.as_ref().map(|p| p as &dyn sactx_core::provider::CompletionProvider),
    )?;
    let n = generated.bank.rules.len();
    let failures = generated.transport_failures;
    model.semantics = Some(generated.bank);
    let out = out.unwrap_or(model_path);
    model.save(out)?;
    if let Some(p) = &live {
        write_audit(p, audit)?;
    }
    if let Some((key, err)) = failures.into_iter().next() {
        eprintln!("provider failed for {}/{}={}; template text stored instead", key.sensor, key.actuator, key.state);
        return Err(err.into());
    }
    Ok(format!("wrote {n} expectations to {}", out.display()))
}

pub struct Detection {
    pub outcomes: Vec<Outcome>,
    pub windows: usize,
    pub seconds: f64,
}

pub fn run_detection(cfg: &Config, manifest: &Manifest, model: &Model, test: &Dataset, explain: bool, live: Option<&HttpProvider>) -> Result<Detection> {
    let index = model.require_index()?;
    let detector = Detector::new(&model.rulebank, index, model.semantics.as_ref(), cfg.screen_config())?;
    let ws = windows(test, manifest, &model.rulebank.metadata.binnings)?;
    let p = live.map(|p| p as &dyn sactx_core::provider::CompletionProvider);
    let t0 = Instant::now();
    let mut outcomes = detect(&detector, &ws, Providers { arbiter: p, diagnosis: p }, explain)?;
    let seconds = t0.elapsed().as_secs_f64();
    outcomes.sort_by(|a, b| (a.verdict.start, &a.verdict.sensor).cmp(&(b.verdict.start, &b.verdict.sensor)));
    Ok(Detection { outcomes, windows: ws.len(), seconds })
}

pub fn detect_cmd(cfg: &Config, manifest: &Path, model_path: &Path, data: &Path, out: &Path, explain: bool, audit: Option<&Path>) -> Result<String> {
    let m = Manifest::load(manifest)?;
    let model = Model::load(model_path, &m)?;
    let ds = ingest_csv(data, &m)?;
    let live = provider(cfg)?;
    let run = run_detection(cfg, &m, &model, &ds, explain, live.as_ref())?;
    write(out, verdicts_jsonl(&run.outcomes)?)?;
    if let Some(p) = &live {
        write_audit(p, audit)?;
    }
    let flagged = run.outcomes.iter().filter(|o| o.verdict.decision.is_anomaly()).count();
    Ok(format!(
        "{} windows, {flagged} anomalous, {:.0} windows/s; wrote {}",
        run.windows,
        run.windows as f64 / run.seconds.max(1e-9),
        out.display()
    ))
}

/// Window-level metrics of the OR-aggregated system verdicts against the dataset's labels.
pub fn evaluate(outcomes: &[Outcome], labels: &[u8], window: usize) -> Result<RunMetrics> {
    let verdicts: Vec<_> = outcomes.iter().map(|o| o.verdict.clone()).collect();
    let system = system_verdicts(&verdicts);
    let mut predicted = Vec::with_capacity(system.len());
    let mut truth = Vec::with_capacity(system.len());
    for v in &system {
        let span = labels
            .get(v.start..v.start + window)
            .ok_or_else(|| CliError::usage(format!("verdict at {} lies outside the labeled data", v.start)))?;
        predicted.push(v.decision.is_anomaly() as u8);
        truth.push(span.iter().any(|&l| l != 0) as u8);
    }
    compute_metrics(&predicted, &truth)
}

fn labels(ds: &Dataset) -> Result<&[u8]> {
    ds.labels.as_deref().ok_or_else(|| CliError::usage("the manifest declares no label column"))
}

pub fn evaluate_cmd(manifest: &Path, verdicts: &Path, data: &Path, out: Option<&Path>) -> Result<String> {
    let m = Manifest::load(manifest)?;
    let ds = ingest_csv(data, &m)?;
    let outcomes = parse_verdicts(&read(verdicts)?)?;
    let metrics = evaluate(&outcomes, labels(&ds)?, m.window)?;
    let json = metrics_json(&metrics);
    match out {
        Some(p) => {
            write(p, &json)?;
            Ok(format!(
                "precision {:.4} recall {:.4} f1 {:.4}; wrote {}",
                metrics.precision,
                metrics.recall,
                metrics.f1,
                p.display()
            ))
        }
        None => Ok(json.trim_end().to_string()),
    }
}

pub fn report_cmd(manifest: &Path, verdicts: &Path, data: &Path, out_dir: &Path) -> Result<String> {
    let m = Manifest::load(manifest)?;
    let ds = ingest_csv(data, &m)?;
    let outcomes = parse_verdicts(&read(verdicts)?)?;
    let metrics = match &ds.labels {
        Some(l) => evaluate(&outcomes, l, m.window)?,
        None => RunMetrics::default(),
    };
    let files: Vec<PathBuf> = emit_report(&outcomes, &metrics, m.window, ds.labels.as_deref(), out_dir)?;
    Ok(format!("wrote {} files to {}", files.len(), out_dir.display()))
}

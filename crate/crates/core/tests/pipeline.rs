use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use serde_json::Value;

use sactx_core::features::{slice_windows, ActuatorCombination, FeatureExtractor};
use sactx_core::inference::{detect, Decision, Detector, Path, Providers, ScreenConfig, Screened};
use sactx_core::provider::{CompletionProvider, ProviderError, Role};
use sactx_core::rulelearn::{learn_rulebank, LearnConfig, ModeRef, RuleBank, SensorMeta};
use sactx_core::saindex::{build_sa_index, related_actuators, ActuatorBinning, Aggregation, SaIndex, SignatureParams};
use sactx_core::semantics::{generate_semantic_bank, sentence_count, ProviderKind, SemanticConfig};
use sactx_core::simulator::{next_valve_close, run_simulation, AttackKind, AttackSpec, PlantConfig, Trace};
use sactx_core::Window;

const W: usize = 30;

struct Fixture {
    bank: RuleBank,
    index: SaIndex,
    binnings: Vec<ActuatorBinning>,
}

fn windows(trace: &Trace, binnings: &[ActuatorBinning]) -> Vec<Window> {
    let cols: Vec<Vec<f64>> = binnings.iter().map(|b| trace.column(&b.actuator).unwrap()).collect();
    let ac_at = |t: usize| ActuatorCombination(binnings.iter().zip(&cols).map(|(b, c)| b.discretize(c[t])).collect());
    slice_windows("LIT", &trace.lit, ac_at, W, W).unwrap()
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let trace = run_simulation(&PlantConfig { seed: 7, ..PlantConfig::default() }, 30_000, &[]).unwrap();
        let binnings: Vec<ActuatorBinning> = ["MV", "P1"]
            .iter()
            .map(|a| ActuatorBinning::fit(*a, &trace.column(a).unwrap(), 4).unwrap())
            .collect();
        let lo = trace.lit.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = trace.lit.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sensors = [SensorMeta { sensor: "LIT".into(), actuators: vec!["MV".into(), "P1".into()], range: [lo, hi] }];
        let cfg = LearnConfig { seed: 7, ..LearnConfig::default() };
        let bank = learn_rulebank(&windows(&trace, &binnings), &sensors, &binnings, "pipeline", &cfg).unwrap();
        let index = build_sa_index(&bank, &binnings, &SignatureParams::default(), Aggregation::Mean).unwrap();
        Fixture { bank, index, binnings }
    })
}

struct Canned(&'static str);

impl CompletionProvider for Canned {
    fn complete(&self, _: Role, _: &Value) -> Result<String, ProviderError> {
        Ok(self.0.to_string())
    }
}

struct Down(AtomicUsize);

impl CompletionProvider for Down {
    fn complete(&self, _: Role, _: &Value) -> Result<String, ProviderError> {
        self.0.fetch_add(1, Ordering::SeqCst);
        Err(ProviderError::Transport { attempts: 3, message: "connection refused".into() })
    }
}

#[test]
fn every_context_has_modes() {
    let f = fixture();
    assert!(!f.bank.keys.is_empty());
    for k in &f.bank.keys {
        assert!(!k.modes.is_empty());
    }
    let again = RuleBank::from_json(&f.bank.to_json().unwrap()).unwrap();
    assert_eq!(again.to_json().unwrap(), f.bank.to_json().unwrap());
}

#[test]
fn both_actuators_drive_the_level() {
    let f = fixture();
    let (mv, p1) = (f.index.r("LIT", "MV"), f.index.r("LIT", "P1"));
    assert!(mv >= 0.5 && p1 >= 0.5, "r(MV) = {mv}, r(P1) = {p1}");
    let ranked = related_actuators(&f.index, "LIT", 5, 0.1);
    assert_eq!(ranked.len(), 2);
    assert!(ranked[0].1 >= ranked[1].1);
}

#[test]
fn semantic_coverage_follows_relatedness() {
    let f = fixture();
    let cfg = SemanticConfig::default();
    let out = generate_semantic_bank(&f.bank, &f.index, &cfg, None).unwrap();
    assert!(out.transport_failures.is_empty());
    for e in &f.index.entries {
        let has = out.bank.get(&e.sensor, &e.actuator, e.state).is_some();
        assert_eq!(has, f.index.r(&e.sensor, &e.actuator) >= cfg.r_min, "{}/{}={}", e.sensor, e.actuator, e.state);
    }
    for r in &out.bank.rules {
        assert_eq!(r.provider, ProviderKind::Template);
        assert!((1..=2).contains(&sentence_count(&r.text)));
        assert_eq!(r.provider_digest.len(), 64);
    }
    let again = generate_semantic_bank(&f.bank, &f.index, &cfg, None).unwrap();
    assert_eq!(serde_json::to_string(&out.bank).unwrap(), serde_json::to_string(&again.bank).unwrap());
}

#[test]
fn long_answers_fall_back_to_templates() {
    let f = fixture();
    let cfg = SemanticConfig::default();
    let template = generate_semantic_bank(&f.bank, &f.index, &cfg, None).unwrap().bank;
    let out = generate_semantic_bank(&f.bank, &f.index, &cfg, Some(&Canned("One. Two. Three."))).unwrap();
    assert!(out.transport_failures.is_empty());
    assert_eq!(out.bank.rules.len(), template.rules.len());
    for (a, b) in out.bank.rules.iter().zip(&template.rules) {
        assert_eq!(a.text, b.text);
        assert_eq!(a.provider, ProviderKind::Template);
        assert_eq!(a.provider_digest, b.provider_digest);
        assert!(a.rejection.is_some());
    }
}

#[test]
fn valid_answers_are_used() {
    let f = fixture();
    let out = generate_semantic_bank(&f.bank, &f.index, &SemanticConfig::default(), Some(&Canned(" The level rises. "))).unwrap();
    assert!(!out.bank.rules.is_empty());
    for r in &out.bank.rules {
        assert_eq!(r.text, "The level rises.");
        assert_eq!(r.provider, ProviderKind::Llm);
    }
}

#[test]
fn transport_failures_are_reported() {
    let f = fixture();
    let down = Down(AtomicUsize::new(0));
    let cfg = SemanticConfig { max_in_flight: 3, ..SemanticConfig::default() };
    let out = generate_semantic_bank(&f.bank, &f.index, &cfg, Some(&down)).unwrap();
    assert_eq!(out.transport_failures.len(), out.bank.rules.len());
    assert_eq!(down.0.load(Ordering::SeqCst), out.bank.rules.len());
    assert!(out.bank.rules.iter().all(|r| r.provider == ProviderKind::Template));
}

fn screen(trace: &Trace, explain: bool) -> Vec<sactx_core::inference::Outcome> {
    let f = fixture();
    let sem = generate_semantic_bank(&f.bank, &f.index, &SemanticConfig::default(), None).unwrap().bank;
    let det = Detector::new(&f.bank, &f.index, Some(&sem), ScreenConfig::default()).unwrap();
    detect(&det, &windows(trace, &f.binnings), Providers::default(), explain).unwrap()
}

#[test]
fn clean_operation_is_mostly_normal() {
    let trace = run_simulation(&PlantConfig { seed: 8, ..PlantConfig::default() }, 12_000, &[]).unwrap();
    let out = screen(&trace, false);
    let flagged = out.iter().filter(|o| o.verdict.decision == Decision::Anomaly).count();
    assert!(flagged * 20 <= out.len(), "{flagged} of {} clean windows flagged", out.len());
    for w in out.windows(2) {
        assert!(w[0].verdict.start < w[1].verdict.start);
    }
}

fn forced_valve(len: usize) -> (AttackSpec, Vec<sactx_core::inference::Outcome>) {
    let cfg = PlantConfig { seed: 8, ..PlantConfig::default() };
    let clean = run_simulation(&cfg, 12_000, &[]).unwrap();
    let start = next_valve_close(&clean, 3_000).unwrap().div_ceil(W) * W;
    let attack = AttackSpec::new(AttackKind::ForceValveOpen, start, start + len);
    let trace = run_simulation(&cfg, 12_000, &[attack]).unwrap();
    let out = screen(&trace, true);
    for o in &out {
        if let Some(d) = &o.diagnosis {
            assert_eq!(d.final_decision, o.verdict.decision);
        }
        if o.verdict.path == Path::Arbiter {
            assert!(o.verdict.ambiguous);
        }
    }
    (attack, out)
}

fn caught(attack: &AttackSpec, out: &[sactx_core::inference::Outcome]) -> Vec<Vec<String>> {
    out.iter()
        .filter(|o| attack.contains(o.verdict.start) && o.verdict.decision == Decision::Anomaly)
        .map(|o| o.diagnosis.as_ref().unwrap().suspects.iter().map(|s| s.actuator.clone()).collect())
        .collect()
}

#[test]
fn forced_valve_is_caught_and_blamed_on_the_valve() {
    let (attack, out) = forced_valve(600);
    let hits = caught(&attack, &out);
    assert!(hits.len() >= 10, "{} detections", hits.len());
    let blamed = hits.iter().filter(|s| s.first().is_some_and(|a| a == "MV")).count();
    assert!(blamed * 10 >= hits.len() * 9, "MV ranked first in {blamed} of {} detections", hits.len());
}

#[test]
fn long_valve_attack_keeps_the_valve_suspected() {
    // The demand pump switches on partway through, so P1 may outrank MV; MV must stay listed.
    let (attack, out) = forced_valve(1_200);
    let hits = caught(&attack, &out);
    assert!(hits.len() >= 20, "{} detections", hits.len());
    assert!(hits.iter().all(|s| s.iter().any(|a| a == "MV")), "{hits:?}");
}

#[test]
fn frozen_sensor_is_caught() {
    let cfg = PlantConfig { seed: 9, ..PlantConfig::default() };
    let attack = AttackSpec::new(AttackKind::FreezeSensor, 6_000, 6_600);
    let trace = run_simulation(&cfg, 9_000, &[attack]).unwrap();
    let out = screen(&trace, false);
    let inside: Vec<_> = out.iter().filter(|o| attack.contains(o.verdict.start)).collect();
    let caught = inside.iter().filter(|o| o.verdict.decision == Decision::Anomaly).count();
    assert!(caught * 10 >= inside.len() * 9, "{caught} of {}", inside.len());
}

#[test]
fn every_mode_is_pooled_once_per_actuator() {
    let f = fixture();
    let meta = f.bank.metadata.sensor("LIT").unwrap();
    for (ki, key) in f.bank.keys.iter().enumerate() {
        for mode in &key.modes {
            let r = ModeRef { key: ki as u32, mode: mode.mode_id };
            for a in &meta.actuators {
                let holders = f.index.entries.iter().filter(|e| &e.actuator == a && e.modes.contains(&r)).count();
                assert_eq!(holders, 1, "{r:?} under {a}");
            }
        }
    }
    let again = build_sa_index(&f.bank, &f.binnings, &SignatureParams::default(), Aggregation::Mean).unwrap();
    assert_eq!(serde_json::to_string(&again).unwrap(), serde_json::to_string(&f.index).unwrap());
}

#[test]
fn semantic_categories_are_the_dominant_signature() {
    let f = fixture();
    let sem = generate_semantic_bank(&f.bank, &f.index, &SemanticConfig::default(), None).unwrap().bank;
    assert!(!sem.rules.is_empty());
    for rule in &sem.rules {
        let t = &rule.target;
        let entry = f.index.entry(&t.sensor, &t.actuator, t.state).unwrap();
        let top = entry.signatures.iter().map(|w| w.weight).fold(0.0, f64::max);
        let heaviest: Vec<_> = entry.signatures.iter().filter(|w| w.weight == top).map(|w| w.signature).collect();
        assert_eq!(rule.attributes.signature(), heaviest[0], "{}/{}={}", t.sensor, t.actuator, t.state);
    }
}

fn attack_windows() -> Vec<Window> {
    let f = fixture();
    let attacks = [
        AttackSpec::new(AttackKind::ForceValveOpen, 3_000, 3_600),
        AttackSpec::new(AttackKind::FreezeSensor, 7_500, 8_100),
    ];
    let trace = run_simulation(&PlantConfig { seed: 10, ..PlantConfig::default() }, 12_000, &attacks).unwrap();
    windows(&trace, &f.binnings)
}

#[test]
fn envelope_acceptance_short_circuits_screening() {
    let f = fixture();
    let ext = FeatureExtractor::<f64>::new(W).unwrap();
    let det = Detector::new(&f.bank, &f.index, None, ScreenConfig::default()).unwrap();
    let mut inside = 0;
    for w in attack_windows() {
        let y = ext.descriptor(&w.values).unwrap().to_array();
        let exact = f.bank.get("LIT", &w.ac).filter(|k| !k.pooled_only);
        let contained = exact.is_some_and(|k| k.modes.iter().any(|m| m.envelope.contains(&y)));
        match det.screen_window(&w).unwrap() {
            Screened::Definitive(v) => {
                assert_eq!(v.path == Path::Envelope, contained, "window {}", w.start_index);
                if contained {
                    inside += 1;
                    assert_eq!(v.decision, Decision::Normal);
                    assert!(v.margin.is_none() && !v.ambiguous);
                }
            }
            Screened::Ambiguous(_) => assert!(!contained, "window {}", w.start_index),
        }
    }
    assert!(inside > 0);
}

#[test]
fn wider_tolerance_never_adds_alarms() {
    let f = fixture();
    let ws = attack_windows();
    let run = |rho: f64| {
        let det = Detector::new(&f.bank, &f.index, None, ScreenConfig { rho, ..ScreenConfig::default() }).unwrap();
        detect(&det, &ws, Providers::default(), false).unwrap()
    };
    let tight = run(0.0);
    for rho in [0.1, 0.5, 2.0] {
        let loose = run(rho);
        for (a, b) in tight.iter().zip(&loose) {
            assert_eq!(a.verdict.start, b.verdict.start);
            if a.verdict.decision == Decision::Normal {
                assert_eq!(b.verdict.decision, Decision::Normal, "rho {rho}, window {}", a.verdict.start);
            }
        }
    }
}

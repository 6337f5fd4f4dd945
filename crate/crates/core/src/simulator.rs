//! Desk-scale two-actuator tank process with hysteresis level control and attack injection.
//!
//! The plant mirrors a raw-water stage: an inlet valve `MV` fills the tank, a transfer pump
//! `P1` drains it on a fixed demand schedule, and `P2` is an idle standby pump. The controller
//! opens the valve below `l_low` and closes it above `l_high`, acting on the true level.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 7] = ["timestamp", "LIT", "FIT", "MV", "P1", "P2", "label"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    /// Inflow with the valve open, level units per second.
    pub q_in: f64,
    /// Outflow with the transfer pump running, level units per second.
    pub q_out: f64,
    pub l_low: f64,
    pub l_high: f64,
    /// Level sensor noise standard deviation.
    pub noise_sigma: f64,
    /// Flow sensor noise standard deviation.
    pub flow_noise_sigma: f64,
    /// Seconds per sample.
    pub dt: f64,
    pub seed: u64,
    /// Samples the transfer pump runs per demand cycle.
    pub demand_on: usize,
    /// Samples the transfer pump rests per demand cycle.
    pub demand_off: usize,
    /// Offset of the demand schedule at sample 0 of the warm-up.
    pub demand_phase: usize,
    /// Overflow rim; the level cannot rise above it.
    pub capacity: f64,
    /// Samples simulated before recording starts, so traces begin on the steady operating cycle
    /// rather than on the start-up fill.
    pub warmup: usize,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            q_in: 0.5,
            q_out: 0.4,
            l_low: 200.0,
            l_high: 800.0,
            noise_sigma: 1.0,
            flow_noise_sigma: 0.01,
            dt: 1.0,
            seed: 0,
            demand_on: 1800,
            demand_off: 1800,
            demand_phase: 0,
            capacity: 900.0,
            warmup: 7200,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.q_in, self.q_out, self.l_low, self.l_high, self.noise_sigma, self.flow_noise_sigma, self.dt, self.capacity];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Spec("plant parameters must be finite".into()));
        }
        if self.l_low >= self.l_high {
            return Err(Error::Spec(format!("l_low {} must be below l_high {}", self.l_low, self.l_high)));
        }
        if self.q_in <= 0.0 || self.q_out <= 0.0 || self.dt <= 0.0 {
            return Err(Error::Spec("flow rates and dt must be positive".into()));
        }
        if self.noise_sigma < 0.0 || self.flow_noise_sigma < 0.0 {
            return Err(Error::Spec("noise levels must be non-negative".into()));
        }
        if self.capacity <= self.l_high {
            return Err(Error::Spec(format!("capacity {} must exceed l_high {}", self.capacity, self.l_high)));
        }
        if self.demand_on + self.demand_off == 0 {
            return Err(Error::Spec("demand cycle has zero length".into()));
        }
        Ok(())
    }
}

/// True (noise-free) plant state at one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantState {
    pub t: usize,
    pub level: f64,
    pub mv: bool,
    pub p1: bool,
    pub p2: bool,
    /// Offset of the demand schedule, in samples.
    pub phase: usize,
}

fn demand(t: usize, phase: usize, cfg: &PlantConfig) -> bool {
    (t + phase) % (cfg.demand_on + cfg.demand_off) < cfg.demand_on
}

impl PlantState {
    pub fn new(level: f64, mv: bool, phase: usize, cfg: &PlantConfig) -> Self {
        Self { t: 0, level, mv, p1: demand(0, phase, cfg), p2: false, phase }
    }

    /// Seeded initial condition: level inside the control band and a random valve state, on the
    /// configured demand schedule.
    pub fn seeded(cfg: &PlantConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1a7e);
        let level = rng.random_range(cfg.l_low..cfg.l_high);
        let mv = rng.random_bool(0.5);
        Self::new(level, mv, cfg.demand_phase, cfg)
    }
}

/// Advances the plant by one sample with the current actuator outputs, then applies control.
pub fn step_plant(state: &PlantState, cfg: &PlantConfig) -> PlantState {
    let inflow = if state.mv { cfg.q_in } else { 0.0 };
    let outflow = if state.p1 { cfg.q_out } else { 0.0 };
    let level = (state.level + (inflow - outflow) * cfg.dt).clamp(0.0, cfg.capacity);
    let mv = if level > cfg.l_high {
        false
    } else if level < cfg.l_low {
        true
    } else {
        state.mv
    };
    let t = state.t + 1;
    PlantState { t, level, mv, p1: demand(t, state.phase, cfg), p2: false, phase: state.phase }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    ForceValveOpen,
    FreezeSensor,
    BiasSensor,
}

impl AttackKind {
    fn target(self) -> &'static str {
        match self {
            AttackKind::ForceValveOpen => "MV",
            AttackKind::FreezeSensor | AttackKind::BiasSensor => "LIT",
        }
    }
}

/// Attack active on samples `start..end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub magnitude: f64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, start: usize, end: usize) -> Self {
        Self { kind, start, end, magnitude: 0.0 }
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.start..self.end).contains(&t)
    }
}

fn validate_attacks(attacks: &[AttackSpec], duration: usize) -> Result<()> {
    for a in attacks {
        if a.start >= a.end || a.end > duration {
            return Err(Error::Spec(format!("attack interval {}..{} invalid for a trace of {duration} samples", a.start, a.end)));
        }
        if !a.magnitude.is_finite() {
            return Err(Error::Spec("attack magnitude must be finite".into()));
        }
    }
    for (i, a) in attacks.iter().enumerate() {
        for b in &attacks[i + 1..] {
            if a.kind.target() == b.kind.target() && a.start < b.end && b.start < a.end {
                return Err(Error::Spec(format!("overlapping attacks on {}", a.kind.target())));
            }
        }
    }
    Ok(())
}

/// Recorded columns of one simulation run plus the noise-free level.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub timestamp: Vec<f64>,
    pub lit: Vec<f64>,
    pub fit: Vec<f64>,
    pub mv: Vec<u8>,
    pub p1: Vec<u8>,
    pub p2: Vec<u8>,
    pub label: Vec<u8>,
    pub true_level: Vec<f64>,
    pub attacks: Vec<AttackSpec>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.lit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lit.is_empty()
    }

    /// A recorded column by its CSV name, as floats.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let bits = |v: &[u8]| v.iter().map(|&b| b as f64).collect();
        Some(match name {
            "timestamp" => self.timestamp.clone(),
            "LIT" => self.lit.clone(),
            "FIT" => self.fit.clone(),
            "MV" => bits(&self.mv),
            "P1" => bits(&self.p1),
            "P2" => bits(&self.p2),
            "label" => bits(&self.label),
            _ => return None,
        })
    }

    /// CSV with header; floats in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", CSV_HEADER.join(","))?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.timestamp[i], self.lit[i], self.fit[i], self.mv[i], self.p1[i], self.p2[i], self.label[i]
            )?;
        }
        Ok(())
    }
}

/// Runs the plant for `duration` samples with the given attacks; deterministic per seed.
pub fn run_simulation(cfg: &PlantConfig, duration: usize, attacks: &[AttackSpec]) -> Result<Trace> {
    cfg.validate()?;
    validate_attacks(attacks, duration)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let level_noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Spec(e.to_string()))?;
    let flow_noise = Normal::new(0.0, cfg.flow_noise_sigma).map_err(|e| Error::Spec(e.to_string()))?;

    let mut trace = Trace {
        timestamp: Vec::with_capacity(duration),
        lit: Vec::with_capacity(duration),
        fit: Vec::with_capacity(duration),
        mv: Vec::with_capacity(duration),
        p1: Vec::with_capacity(duration),
        p2: Vec::with_capacity(duration),
        label: Vec::with_capacity(duration),
        true_level: Vec::with_capacity(duration),
        attacks: attacks.to_vec(),
    };
    let active = |t: usize, kind: AttackKind| attacks.iter().find(|a| a.kind == kind && a.contains(t));

    let mut state = PlantState::seeded(cfg);
    for _ in 0..cfg.warmup {
        state = step_plant(&state, cfg);
    }
    for t in 0..duration {
        if active(t, AttackKind::ForceValveOpen).is_some() {
            state.mv = true;
        }
        let mut lit = state.level + level_noise.sample(&mut rng);
        let fit = if state.mv { cfg.q_in } else { 0.0 } + flow_noise.sample(&mut rng);
        if let Some(a) = active(t, AttackKind::FreezeSensor) {
            // Held at the last reading before the attack (the first reading if there is none).
            lit = match (a.start, t) {
                (0, 0) => lit,
                (0, _) => trace.lit[0],
                (s, _) => trace.lit[s - 1],
            };
        }
        if let Some(a) = active(t, AttackKind::BiasSensor) {
            lit += a.magnitude;
        }
        trace.timestamp.push(t as f64 * cfg.dt);
        trace.lit.push(lit);
        trace.fit.push(fit);
        trace.mv.push(state.mv as u8);
        trace.p1.push(state.p1 as u8);
        trace.p2.push(state.p2 as u8);
        trace.label.push(attacks.iter().any(|a| a.contains(t)) as u8);
        trace.true_level.push(state.level);
        state = step_plant(&state, cfg);
    }
    Ok(trace)
}

/// First sample `t >= from` at which the clean valve output switches from open to closed.
pub fn next_valve_close(trace: &Trace, from: usize) -> Option<usize> {
    (from.max(1)..trace.len()).find(|&t| trace.mv[t - 1] == 1 && trace.mv[t] == 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> PlantConfig {
        PlantConfig { noise_sigma: 0.0, flow_noise_sigma: 0.0, ..PlantConfig::default() }
    }

    #[test]
    fn valve_open_pump_off_fills_by_q_in() {
        let cfg = quiet();
        let s = PlantState { t: 0, level: 500.0, mv: true, p1: false, p2: false, phase: cfg.demand_on };
        assert_eq!(s.p1, demand(0, s.phase, &cfg));
        let next = step_plant(&s, &cfg);
        assert_eq!(next.level, 500.0 + cfg.q_in * cfg.dt);
    }

    #[test]
    fn crossing_high_setpoint_closes_valve_next_step() {
        let cfg = quiet();
        let s = PlantState { t: 0, level: 799.8, mv: true, p1: false, p2: false, phase: cfg.demand_on };
        let next = step_plant(&s, &cfg);
        assert!(next.level > cfg.l_high);
        assert!(!next.mv);
        let low = PlantState { t: 0, level: 200.2, mv: false, p1: true, p2: false, phase: 0 };
        assert!(step_plant(&low, &cfg).mv);
    }

    #[test]
    fn long_run_stays_in_band() {
        let cfg = PlantConfig { seed: 3, ..PlantConfig::default() };
        let tr = run_simulation(&cfg, 10_000, &[]).unwrap();
        let margin = 3.0 * cfg.noise_sigma;
        assert!(tr.true_level.iter().all(|&l| l >= cfg.l_low - margin && l <= cfg.l_high + margin));
        assert!(tr.label.iter().all(|&l| l == 0));
        assert!(tr.p2.iter().all(|&p| p == 0));
        assert!(tr.mv.contains(&0) && tr.mv.contains(&1));
    }

    #[test]
    fn same_seed_same_trace() {
        let cfg = PlantConfig { seed: 8, ..PlantConfig::default() };
        let a = run_simulation(&cfg, 3000, &[AttackSpec::new(AttackKind::FreezeSensor, 100, 400)]).unwrap();
        let b = run_simulation(&cfg, 3000, &[AttackSpec::new(AttackKind::FreezeSensor, 100, 400)]).unwrap();
        assert_eq!(a, b);
        let c = run_simulation(&PlantConfig { seed: 9, ..cfg }, 3000, &[]).unwrap();
        assert_ne!(a.lit, c.lit);
    }

    #[test]
    fn forced_valve_overfills() {
        let cfg = PlantConfig { seed: 4, ..PlantConfig::default() };
        let clean = run_simulation(&cfg, 20_000, &[]).unwrap();
        let start = next_valve_close(&clean, 0).expect("valve closes at least once");
        let attack = AttackSpec::new(AttackKind::ForceValveOpen, start, start + 600);
        let tr = run_simulation(&cfg, 20_000, &[attack]).unwrap();
        let peak = tr.true_level[attack.start..attack.end].iter().copied().fold(f64::MIN, f64::max);
        assert!(peak > cfg.l_high);
        assert!(tr.mv[attack.start..attack.end].iter().all(|&m| m == 1));
        for t in 0..tr.len() {
            assert_eq!(tr.label[t] == 1, attack.contains(t));
        }
        assert_eq!(&tr.lit[..start], &clean.lit[..start]);
    }

    #[test]
    fn freeze_and_bias() {
        let cfg = PlantConfig { seed: 5, ..PlantConfig::default() };
        let clean = run_simulation(&cfg, 2000, &[]).unwrap();
        let tr = run_simulation(
            &cfg,
            2000,
            &[
                AttackSpec::new(AttackKind::FreezeSensor, 500, 800),
                AttackSpec { kind: AttackKind::BiasSensor, start: 1000, end: 1200, magnitude: 25.0 },
            ],
        )
        .unwrap();
        assert!(tr.lit[500..800].iter().all(|&v| v == clean.lit[499]));
        assert_eq!(tr.lit[800], clean.lit[800]);
        for t in 1000..1200 {
            assert!((tr.lit[t] - clean.lit[t] - 25.0).abs() < 1e-9);
        }
        assert_eq!(tr.true_level, clean.true_level);
    }

    #[test]
    fn invalid_specs() {
        let cfg = PlantConfig::default();
        let overlap = [AttackSpec::new(AttackKind::FreezeSensor, 10, 100), AttackSpec::new(AttackKind::BiasSensor, 50, 60)];
        assert!(matches!(run_simulation(&cfg, 200, &overlap), Err(Error::Spec(_))));
        let different_targets = [AttackSpec::new(AttackKind::FreezeSensor, 10, 100), AttackSpec::new(AttackKind::ForceValveOpen, 50, 60)];
        assert!(run_simulation(&cfg, 200, &different_targets).is_ok());
        assert!(run_simulation(&cfg, 200, &[AttackSpec::new(AttackKind::FreezeSensor, 50, 50)]).is_err());
        assert!(run_simulation(&cfg, 200, &[AttackSpec::new(AttackKind::FreezeSensor, 150, 250)]).is_err());
        let bad = PlantConfig { l_low: 900.0, ..PlantConfig::default() };
        assert!(matches!(run_simulation(&bad, 10, &[]), Err(Error::Spec(_))));
    }

    #[test]
    fn contexts_have_consistent_trends() {
        let cfg = PlantConfig { seed: 6, ..PlantConfig::default() };
        let tr = run_simulation(&cfg, 30_000, &[]).unwrap();
        let mut seen = [false; 2];
        for start in (0..tr.len() - 30).step_by(30) {
            let r = start..start + 30;
            let constant = |c: &[u8]| c[r.clone()].iter().all(|&v| v == c[start]);
            if !constant(&tr.mv) || !constant(&tr.p1) {
                continue;
            }
            let slope = crate::stats::ls_slope(&tr.lit[r.clone()]);
            if tr.mv[start] == 1 {
                assert!(slope > -0.2, "valve open but falling at {start}: {slope}");
                seen[0] = true;
            } else if tr.p1[start] == 1 {
                assert!(slope < 0.0, "draining context not falling at {start}: {slope}");
                seen[1] = true;
            }
        }
        assert!(seen[0] && seen[1]);
    }
}

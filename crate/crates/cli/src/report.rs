//! Run reports: metrics JSON, verdict JSON-lines and one score timeline SVG per sensor.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sactx_core::inference::Outcome;

use crate::error::{write, CliError, Result};
use crate::metrics::RunMetrics;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 260.0;
const PAD: f64 = 40.0;

pub fn metrics_json(m: &RunMetrics) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("metrics serialize");
    s.push('\n');
    s
}

pub fn verdicts_jsonl(outcomes: &[Outcome]) -> Result<String> {
    let mut out = String::new();
    for o in outcomes {
        out += &sactx_core::json::to_string(o).map_err(|e| CliError::data(e.to_string()))?;
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_verdicts(text: &str) -> Result<Vec<Outcome>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::data(format!("verdicts line {}: {e}", i + 1))))
        .collect()
}

/// Maximal runs of ones as half-open sample intervals.
fn runs(labels: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &l) in labels.iter().chain(std::iter::once(&0)).enumerate() {
        match (start, l != 0) {
            (None, true) => start = Some(t),
            (Some(s), false) => {
                out.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Score timeline of one sensor: `min d2 / theta` per window (0 when the envelope accepted,
/// the top of the axis when nothing could be scored), detected windows in red, ground-truth
/// attack intervals in grey.
pub fn timeline_svg(sensor: &str, outcomes: &[&Outcome], window: usize, labels: Option<&[u8]>) -> String {
    let span = outcomes
        .iter()
        .map(|o| o.verdict.start + window)
        .chain(labels.map(|l| l.len()))
        .max()
        .unwrap_or(window)
        .max(1) as f64;
    let raw: Vec<Option<f64>> = outcomes.iter().map(|o| o.verdict.score).collect();
    let top = raw.iter().flatten().copied().fold(2.0_f64, f64::max).min(10.0);
    let x = |t: f64| PAD + t / span * (WIDTH - 2.0 * PAD);
    let y = |v: f64| HEIGHT - PAD - v.clamp(0.0, top) / top * (HEIGHT - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(s, r##"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"##);
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="white"/>"##);
    let _ = writeln!(s, r##"<text x="{PAD}" y="20" font-family="sans-serif" font-size="14">{sensor}: anomaly score (min d2/theta)</text>"##);
    for (a, b) in labels.map(runs).unwrap_or_default() {
        let _ = writeln!(
            s,
            r##"<rect class="truth" x="{:.2}" y="{PAD}" width="{:.2}" height="{:.2}" fill="#999" fill-opacity="0.35"/>"##,
            x(a as f64),
            x(b as f64) - x(a as f64),
            HEIGHT - 2.0 * PAD
        );
    }
    for o in outcomes.iter().filter(|o| o.verdict.decision.is_anomaly()) {
        let a = o.verdict.start as f64;
        let _ = writeln!(
            s,
            r##"<rect class="detected" x="{:.2}" y="{:.2}" width="{:.2}" height="8" fill="#d62728"/>"##,
            x(a),
            HEIGHT - PAD + 4.0,
            x(a + window as f64) - x(a)
        );
    }
    let points: Vec<String> = outcomes
        .iter()
        .zip(&raw)
        .map(|(o, r)| {
            let v = match r {
                Some(v) => *v,
                None if o.verdict.decision.is_anomaly() => top,
                None => 0.0,
            };
            format!("{:.2},{:.2}", x(o.verdict.start as f64 + window as f64 / 2.0), y(v))
        })
        .collect();
    let _ = writeln!(s, r##"<polyline fill="none" stroke="#1f77b4" stroke-width="1" points="{}"/>"##, points.join(" "));
    let _ = writeln!(
        s,
        r##"<line x1="{PAD}" x2="{:.2}" y1="{:.2}" y2="{:.2}" stroke="#333" stroke-dasharray="4 3"/>"##,
        WIDTH - PAD,
        y(1.0),
        y(1.0)
    );
    let _ = writeln!(s, r##"<text x="4" y="{:.2}" font-family="sans-serif" font-size="10">1.0</text>"##, y(1.0) + 3.0);
    let _ = writeln!(s, r##"<text x="4" y="{:.2}" font-family="sans-serif" font-size="10">{top:.1}</text>"##, y(top) + 3.0);
    let _ = writeln!(
        s,
        r##"<line x1="{PAD}" x2="{:.2}" y1="{:.2}" y2="{:.2}" stroke="black"/>"##,
        WIDTH - PAD,
        HEIGHT - PAD,
        HEIGHT - PAD
    );
    let _ = writeln!(s, "</svg>");
    s
}

/// Writes `metrics.json`, `verdicts.jsonl` and `timeline_<sensor>.svg` per sensor into
/// `out_dir`; returns the written paths.
pub fn emit_report(outcomes: &[Outcome], metrics: &RunMetrics, window: usize, labels: Option<&[u8]>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let p = out_dir.join("metrics.json");
    write(&p, metrics_json(metrics))?;
    written.push(p);
    let p = out_dir.join("verdicts.jsonl");
    write(&p, verdicts_jsonl(outcomes)?)?;
    written.push(p);

    let mut by_sensor: BTreeMap<&str, Vec<&Outcome>> = BTreeMap::new();
    for o in outcomes {
        by_sensor.entry(o.verdict.sensor.as_str()).or_default().push(o);
    }
    for (sensor, mut os) in by_sensor {
        os.sort_by_key(|o| o.verdict.start);
        let p = out_dir.join(format!("timeline_{sensor}.svg"));
        write(&p, timeline_svg(sensor, &os, window, labels))?;
        written.push(p);
    }
    Ok(written)
}

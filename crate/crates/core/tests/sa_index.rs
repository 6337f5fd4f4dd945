use proptest::prelude::*;

use sactx_core::saindex::{
    js_divergence, relatedness, Aggregation, SaEntry, SaIndex, Shape, Signature, SignatureParams, Trend, Variability,
    WeightedSignature,
};

fn normalize(w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

fn dist(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, k)
        .prop_filter("some mass", |w| w.iter().sum::<f64>() > 1e-6)
        .prop_map(|w| normalize(&w))
}

fn sig(bin: u8) -> Signature {
    Signature { level_bin: bin, trend: Trend::Maintain, variability: Variability::Compact, shape: Shape::Stable }
}

/// One pooled distribution per actuator state, over level bins 0..k.
fn index_of(states: &[Vec<f64>]) -> SaIndex {
    SaIndex {
        aggregation: Aggregation::Mean,
        signature_params: SignatureParams::default(),
        binnings: Vec::new(),
        entries: states
            .iter()
            .enumerate()
            .map(|(i, p)| SaEntry {
                sensor: "LIT".into(),
                actuator: "MV".into(),
                state: i as u8,
                modes: Vec::new(),
                signatures: p
                    .iter()
                    .enumerate()
                    .filter(|(_, &w)| w > 0.0)
                    .map(|(b, &weight)| WeightedSignature { signature: sig(b as u8), weight })
                    .collect(),
            })
            .collect(),
        relatedness: Vec::new(),
    }
}

fn r_of(states: &[Vec<f64>]) -> f64 {
    relatedness(&index_of(states), "LIT", "MV").unwrap()
}

#[test]
fn duplicating_an_outlier_state_can_raise_mean_relatedness() {
    let common = vec![1.0, 0.0];
    let odd = vec![0.0, 1.0];
    let before = r_of(&[common.clone(), common.clone(), common.clone(), odd.clone()]);
    let after = r_of(&[common.clone(), common.clone(), common, odd.clone(), odd]);
    assert!((before - 0.5).abs() < 1e-12);
    assert!((after - 0.6).abs() < 1e-12);
}

proptest! {
    #[test]
    fn js_is_symmetric_and_bounded((p, q) in (2usize..8).prop_flat_map(|k| (dist(k), dist(k)))) {
        let a = js_divergence(&p, &q).unwrap();
        let b = js_divergence(&q, &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(js_divergence(&p, &p).unwrap().abs() <= 1e-12);
    }

    /// Duplicating the state closest to all others (smallest total divergence) never raises r.
    #[test]
    fn duplicating_the_most_central_state_never_raises_r(states in prop::collection::vec(dist(4), 2..6)) {
        let total = |i: usize| -> f64 {
            states.iter().map(|q| js_divergence(&states[i], q).unwrap()).sum()
        };
        let central = (0..states.len()).min_by(|&a, &b| total(a).total_cmp(&total(b))).unwrap();
        let mut grown = states.clone();
        grown.push(states[central].clone());
        prop_assert!(r_of(&grown) <= r_of(&states) + 1e-12);
    }

    #[test]
    fn relatedness_is_order_independent(states in prop::collection::vec(dist(3), 2..6)) {
        let mut rev = states.clone();
        rev.reverse();
        prop_assert!((r_of(&states) - r_of(&rev)).abs() <= 1e-12);
    }
}

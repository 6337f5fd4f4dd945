//! Coarse level grouping: windows whose mean levels are separated by a clear gap never share a
//! cluster.

use crate::features::Descriptor13;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelGapParams {
    /// Gap threshold as a fraction of the sensor's global range.
    pub range_fraction: f64,
    /// Absolute gap floor.
    pub abs_floor: f64,
}

impl Default for LevelGapParams {
    fn default() -> Self {
        Self { range_fraction: 0.05, abs_floor: 1e-9 }
    }
}

/// Splits windows (by position in `descriptors`) into level groups along sorted `f_mean`.
///
/// Groups are returned in ascending level order; members of each group in ascending position.
pub fn group_by_level<T: Scalar>(
    descriptors: &[Descriptor13<T>],
    sensor_range: T,
    params: &LevelGapParams,
) -> Vec<Vec<usize>> {
    if descriptors.is_empty() {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..descriptors.len()).collect();
    order.sort_by(|&a, &b| {
        descriptors[a]
            .core
            .mean
            .partial_cmp(&descriptors[b].core.mean)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let gap = T::lit(params.abs_floor).max(T::lit(params.range_fraction) * sensor_range.abs());

    let mut groups = vec![vec![order[0]]];
    for pair in order.windows(2) {
        let step = descriptors[pair[1]].core.mean - descriptors[pair[0]].core.mean;
        if step > gap {
            groups.push(Vec::new());
        }
        groups.last_mut().expect("non-empty").push(pair[1]);
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    groups
}

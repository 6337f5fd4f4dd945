//! Window-level statistical descriptors.
//!
//! A sensor window of `W` samples is summarized by an 8-dimensional core vector
//! (used for clustering) and a 13-dimensional descriptor that prepends the
//! extrema and three segment slopes (used for envelopes, distances and
//! diagnosis). Dimension order of the descriptor is fixed:
//!
//! `[f_min, f_max, f_s1, f_s2, f_s3, f_mean, f_amp, f_std, f_rmse, f_delta, f_delta2, f_neg, f_spec]`

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats;

pub const CORE_DIM: usize = 8;
pub const DESCRIPTOR_DIM: usize = 13;
/// Smallest admissible window: each third needs at least three samples.
pub const MIN_WINDOW: usize = 9;
pub const DEFAULT_WINDOW: usize = 30;

pub const DESCRIPTOR_NAMES: [&str; DESCRIPTOR_DIM] = [
    "f_min", "f_max", "f_s1", "f_s2", "f_s3", "f_mean", "f_amp", "f_std", "f_rmse", "f_delta",
    "f_delta2", "f_neg", "f_spec",
];

/// Descriptor dimension indices.
pub mod dim {
    pub const MIN: usize = 0;
    pub const MAX: usize = 1;
    pub const S1: usize = 2;
    pub const S2: usize = 3;
    pub const S3: usize = 4;
    pub const MEAN: usize = 5;
    pub const AMP: usize = 6;
    pub const STD: usize = 7;
    pub const RMSE: usize = 8;
    pub const DELTA: usize = 9;
    pub const DELTA2: usize = 10;
    pub const NEG: usize = 11;
    pub const SPEC: usize = 12;
}

const MAD_FLOOR: f64 = 1e-12;
const SPEC_EPS: f64 = 1e-12;
const NEG_JUMP_FACTOR: f64 = 5.0;

/// Discretized joint actuator state, one entry per actuator in a sensor's scope.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActuatorCombination(pub Vec<u8>);

impl ActuatorCombination {
    pub fn states(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Display for ActuatorCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|s| s.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// One fixed-length univariate slice of a sensor stream.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorWindow<T> {
    pub sensor_id: String,
    pub start_index: usize,
    pub values: Vec<T>,
    /// Actuator combination observed at the first sample.
    pub ac: ActuatorCombination,
}

impl<T: Scalar> SensorWindow<T> {
    pub fn new(
        sensor_id: impl Into<String>,
        start_index: usize,
        values: Vec<T>,
        ac: ActuatorCombination,
    ) -> Result<Self> {
        if values.len() < MIN_WINDOW {
            return Err(Error::usage(format!(
                "window length {} below minimum {MIN_WINDOW}",
                values.len()
            )));
        }
        Ok(Self { sensor_id: sensor_id.into(), start_index, values, ac })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Cuts a stream into windows of `window` samples starting every `stride` samples. The actuator
/// combination of a window is the one at its first sample; a trailing partial window is dropped.
pub fn slice_windows<T: Scalar>(
    sensor: &str,
    values: &[T],
    ac_at: impl Fn(usize) -> ActuatorCombination,
    window: usize,
    stride: usize,
) -> Result<Vec<SensorWindow<T>>> {
    if window < MIN_WINDOW || stride == 0 {
        return Err(Error::usage(format!("window {window} with stride {stride}")));
    }
    (0..values.len().saturating_sub(window - 1))
        .step_by(stride)
        .map(|start| SensorWindow::new(sensor, start, values[start..start + window].to_vec(), ac_at(start)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoreFeatures<T> {
    pub mean: T,
    pub amp: T,
    pub std: T,
    pub rmse: T,
    pub delta: T,
    pub delta2: T,
    pub neg: usize,
    pub spec: T,
}

impl<T: Scalar> CoreFeatures<T> {
    pub fn to_array(&self) -> [T; CORE_DIM] {
        [
            self.mean,
            self.amp,
            self.std,
            self.rmse,
            self.delta,
            self.delta2,
            T::from_usize_lossy(self.neg),
            self.spec,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Descriptor13<T> {
    pub min: T,
    pub max: T,
    pub s1: T,
    pub s2: T,
    pub s3: T,
    pub core: CoreFeatures<T>,
}

impl<T: Scalar> Descriptor13<T> {
    pub fn to_array(&self) -> [T; DESCRIPTOR_DIM] {
        let c = self.core.to_array();
        [
            self.min, self.max, self.s1, self.s2, self.s3, c[0], c[1], c[2], c[3], c[4], c[5],
            c[6], c[7],
        ]
    }

    /// Inverse of [`to_array`](Self::to_array); `f_neg` is rounded to the nearest count.
    pub fn from_array(a: &[T; DESCRIPTOR_DIM]) -> Self {
        Self {
            min: a[dim::MIN],
            max: a[dim::MAX],
            s1: a[dim::S1],
            s2: a[dim::S2],
            s3: a[dim::S3],
            core: CoreFeatures {
                mean: a[dim::MEAN],
                amp: a[dim::AMP],
                std: a[dim::STD],
                rmse: a[dim::RMSE],
                delta: a[dim::DELTA],
                delta2: a[dim::DELTA2],
                neg: a[dim::NEG].max(T::zero()).round().to_usize().unwrap_or(0),
                spec: a[dim::SPEC],
            },
        }
    }

    /// Mean of the three segment slopes.
    pub fn mean_slope(&self) -> T {
        (self.s1 + self.s2 + self.s3) / T::lit(3.0)
    }
}

/// Reusable extractor for a fixed window length; holds the FFT plan.
pub struct FeatureExtractor<T: Scalar> {
    window: usize,
    fft: Arc<dyn Fft<T>>,
}

impl<T: Scalar> fmt::Debug for FeatureExtractor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureExtractor").field("window", &self.window).finish()
    }
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(window: usize) -> Result<Self> {
        if window < MIN_WINDOW {
            return Err(Error::usage(format!("window length {window} below minimum {MIN_WINDOW}")));
        }
        let fft = FftPlanner::new().plan_fft_forward(window);
        Ok(Self { window, fft })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    fn check(&self, values: &[T]) -> Result<()> {
        if values.len() != self.window {
            return Err(Error::usage(format!(
                "window has {} samples, extractor expects {}",
                values.len(),
                self.window
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(())
    }

    pub fn core(&self, values: &[T]) -> Result<CoreFeatures<T>> {
        self.check(values)?;
        Ok(self.core_unchecked(values))
    }

    pub fn descriptor(&self, values: &[T]) -> Result<Descriptor13<T>> {
        self.check(values)?;
        let core = self.core_unchecked(values);
        let seg = self.window / 3;
        let mut min = values[0];
        let mut max = values[0];
        for &v in values {
            min = min.min(v);
            max = max.max(v);
        }
        Ok(Descriptor13 {
            min,
            max,
            s1: stats::ls_slope(&values[..seg]),
            s2: stats::ls_slope(&values[seg..2 * seg]),
            // W mod 3 leftovers belong to the last segment.
            s3: stats::ls_slope(&values[2 * seg..]),
            core,
        })
    }

    fn core_unchecked(&self, x: &[T]) -> CoreFeatures<T> {
        let w = x.len();
        let wf = T::from_usize_lossy(w);
        let mean = stats::mean(x);

        let mut sorted = x.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let amp = stats::quantile_sorted(&sorted, T::lit(0.995))
            - stats::quantile_sorted(&sorted, T::lit(0.005));

        let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / wf;
        let std = var.sqrt();

        let slope = stats::ls_slope(x);
        let t_mean = T::from_usize_lossy(w - 1) / T::lit(2.0);
        let sse = x
            .iter()
            .enumerate()
            .map(|(t, &v)| {
                let fit = mean + slope * (T::from_usize_lossy(t) - t_mean);
                (v - fit) * (v - fit)
            })
            .sum::<T>();
        let rmse = (sse / wf).sqrt();

        let d1: Vec<T> = x.windows(2).map(|p| p[1] - p[0]).collect();
        let d2: Vec<T> = d1.windows(2).map(|p| p[1] - p[0]).collect();
        let delta = d1.iter().map(|v| v.abs()).sum::<T>() / T::from_usize_lossy(d1.len());
        let delta2 = d2.iter().map(|v| v.abs()).sum::<T>() / T::from_usize_lossy(d2.len());

        let mad = stats::mad(&d1).unwrap_or(T::zero()).max(T::lit(MAD_FLOOR));
        let threshold = -T::lit(NEG_JUMP_FACTOR) * mad;
        let neg = d1.iter().filter(|&&d| d < threshold).count();

        CoreFeatures { mean, amp, std, rmse, delta, delta2, neg, spec: self.spectral_ratio(x, mean) }
    }

    /// Non-DC energy share of the one-sided spectrum of the mean-centered window.
    fn spectral_ratio(&self, x: &[T], mean: T) -> T {
        let mut buf: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v - mean, T::zero())).collect();
        self.fft.process(&mut buf);
        let half = x.len() / 2;
        let power: Vec<T> = buf[..=half].iter().map(|c| c.norm_sqr()).collect();
        let total = power.iter().copied().sum::<T>();
        let non_dc = power[1..].iter().copied().sum::<T>();
        non_dc / (total + T::lit(SPEC_EPS))
    }
}

pub fn extract_core<T: Scalar>(window: &SensorWindow<T>) -> Result<CoreFeatures<T>> {
    FeatureExtractor::new(window.len())?.core(&window.values)
}

pub fn extract_descriptor<T: Scalar>(window: &SensorWindow<T>) -> Result<Descriptor13<T>> {
    FeatureExtractor::new(window.len())?.descriptor(&window.values)
}

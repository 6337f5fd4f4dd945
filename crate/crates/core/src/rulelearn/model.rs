//! Per-mode rule components: quantile envelope, robust scaler and diagonal distance model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Descriptor13, DESCRIPTOR_DIM};
use crate::scalar::Scalar;
use crate::stats;

pub type Row<T> = [T; DESCRIPTOR_DIM];

fn column<T: Scalar>(rows: &[Row<T>], j: usize) -> Vec<T> {
    rows.iter().map(|r| r[j]).collect()
}

/// Element-wise `[Q_alpha, Q_(1-alpha)]` box over a mode's descriptors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct QuantileEnvelope<T> {
    pub alpha: T,
    pub lo: Row<T>,
    pub hi: Row<T>,
}

impl<T: Scalar> QuantileEnvelope<T> {
    pub fn build(rows: &[Row<T>], alpha: T) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::usage("envelope of an empty cluster"));
        }
        if !(alpha >= T::zero() && alpha <= T::lit(0.5)) {
            return Err(Error::usage(format!("envelope alpha {alpha} outside [0, 0.5]")));
        }
        let mut lo = [T::zero(); DESCRIPTOR_DIM];
        let mut hi = [T::zero(); DESCRIPTOR_DIM];
        for j in 0..DESCRIPTOR_DIM {
            let mut col = column(rows, j);
            col.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            lo[j] = stats::quantile_sorted(&col, alpha);
            hi[j] = stats::quantile_sorted(&col, T::one() - alpha);
        }
        Ok(Self { alpha, lo, hi })
    }

    /// Closed-interval membership in every dimension.
    pub fn contains(&self, y: &Row<T>) -> bool {
        (0..DESCRIPTOR_DIM).all(|j| y[j] >= self.lo[j] && y[j] <= self.hi[j])
    }

    /// Dimensions where `y` falls outside the box.
    pub fn violations(&self, y: &Row<T>) -> Vec<usize> {
        (0..DESCRIPTOR_DIM).filter(|&j| y[j] < self.lo[j] || y[j] > self.hi[j]).collect()
    }
}

/// Per-key median/IQR scaling. A zero IQR is replaced by one, so degenerate dimensions are only
/// centered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct RobustScaler<T> {
    pub med: Row<T>,
    pub iqr: Row<T>,
}

impl<T: Scalar> RobustScaler<T> {
    pub fn fit(rows: &[Row<T>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::usage("scaler fit on no rows"));
        }
        let mut med = [T::zero(); DESCRIPTOR_DIM];
        let mut iqr = [T::one(); DESCRIPTOR_DIM];
        for j in 0..DESCRIPTOR_DIM {
            let col = column(rows, j);
            med[j] = stats::median(&col)?;
            let spread = stats::iqr(&col)?;
            if spread > T::epsilon() * T::lit(10.0) * med[j].abs().max(T::one()) {
                iqr[j] = spread;
            }
        }
        Ok(Self { med, iqr })
    }

    pub fn transform(&self, y: &Row<T>) -> Row<T> {
        let mut out = [T::zero(); DESCRIPTOR_DIM];
        for j in 0..DESCRIPTOR_DIM {
            out[j] = (y[j] - self.med[j]) / self.iqr[j];
        }
        out
    }

    pub fn inverse(&self, z: &Row<T>) -> Row<T> {
        let mut out = [T::zero(); DESCRIPTOR_DIM];
        for j in 0..DESCRIPTOR_DIM {
            out[j] = z[j] * self.iqr[j] + self.med[j];
        }
        out
    }
}

/// Tunables for the distance model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceParams<T> {
    pub z_max: T,
    pub sigma_floor: T,
    pub q: T,
    pub theta_base: T,
    pub n_small: usize,
}

impl<T: Scalar> Default for DistanceParams<T> {
    fn default() -> Self {
        Self {
            z_max: T::lit(8.0),
            sigma_floor: T::lit(1e-6),
            q: T::lit(0.999),
            theta_base: T::lit(52.0),
            n_small: 20,
        }
    }
}

/// Robust diagonal distance around a mode's median, measured in its key's scaled space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct RobustDistanceModel<T> {
    pub mu: Row<T>,
    pub sigma: Row<T>,
    pub theta: T,
    pub z_max: T,
    pub scaler: RobustScaler<T>,
}

impl<T: Scalar> RobustDistanceModel<T> {
    /// Fits center and scale on the cluster's descriptors and calibrates the threshold on the
    /// cluster's own training distances.
    pub fn fit(rows: &[Row<T>], scaler: RobustScaler<T>, params: &DistanceParams<T>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::usage("distance model of an empty cluster"));
        }
        let scaled: Vec<Row<T>> = rows.iter().map(|r| scaler.transform(r)).collect();
        let mut mu = [T::zero(); DESCRIPTOR_DIM];
        let mut sigma = [T::zero(); DESCRIPTOR_DIM];
        for j in 0..DESCRIPTOR_DIM {
            let col = column(&scaled, j);
            mu[j] = stats::median(&col)?;
            sigma[j] = stats::iqr(&col)?.max(params.sigma_floor);
        }
        let mut model = Self { mu, sigma, theta: T::zero(), z_max: params.z_max, scaler };
        let d2: Vec<T> = rows.iter().map(|r| model.d2(r)).collect();
        model.theta = calibrate_threshold(&d2, rows.len(), params)?;
        Ok(model)
    }

    /// Clipped standardized deviations `u_j`.
    pub fn components(&self, y: &Row<T>) -> Row<T> {
        let z = self.scaler.transform(y);
        let mut u = [T::zero(); DESCRIPTOR_DIM];
        for j in 0..DESCRIPTOR_DIM {
            let v = (z[j] - self.mu[j]) / self.sigma[j];
            // NaN only arises from inf/inf; treat it as maximally deviant.
            u[j] = if v.is_nan() { self.z_max } else { v.max(-self.z_max).min(self.z_max) };
        }
        u
    }

    pub fn d2(&self, y: &Row<T>) -> T {
        self.components(y).iter().map(|&u| u * u).sum()
    }

    /// `theta (1 + rho) - d2`; non-negative means accepted.
    pub fn margin(&self, y: &Row<T>, rho: T) -> T {
        self.theta * (T::one() + rho) - self.d2(y)
    }

    /// The mode's median descriptor in original units.
    pub fn center(&self) -> Descriptor13<T> {
        Descriptor13::from_array(&self.scaler.inverse(&self.mu))
    }
}

/// `Q_q(d2)`, floored at `theta_base` for clusters smaller than `n_small`.
pub fn calibrate_threshold<T: Scalar>(training_d2: &[T], support: usize, params: &DistanceParams<T>) -> Result<T> {
    let raw = stats::quantile(training_d2, params.q)?;
    Ok(if support < params.n_small { raw.max(params.theta_base) } else { raw })
}

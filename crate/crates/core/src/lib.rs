//! Context-conditioned anomaly screening and diagnosis for industrial control telemetry.
//!
//! Normal behavior of every sensor is learned separately for each joint
//! actuator state (the sensor–actuator context). Each context holds a set of
//! normal modes, each compiled into a per-dimension quantile envelope and a
//! robust diagonal distance model over a 13-dimensional window descriptor.
//! Live windows are screened against the modes of their context, falling
//! back to an actuator-marginalized index when the exact context was never
//! seen, and every verdict can be explained through per-actuator semantic
//! expectations.
//!
//! The numeric kernels ([`features`], [`stats`], the envelope and distance
//! models, [`saindex::js_divergence`]) are generic over [`Scalar`]; the learned
//! artifacts use `f64`, exposed through the aliases below.

pub mod error;
pub mod features;
pub mod inference;
pub mod json;
pub mod provider;
pub mod rulelearn;
pub mod saindex;
pub mod scalar;
pub mod semantics;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Window = features::SensorWindow<f64>;
pub type Descriptor = features::Descriptor13<f64>;
pub type Core = features::CoreFeatures<f64>;
pub type Envelope = rulelearn::QuantileEnvelope<f64>;
pub type DistanceModel = rulelearn::RobustDistanceModel<f64>;
pub type Scaler = rulelearn::RobustScaler<f64>;
pub type Mode = rulelearn::ModeRule<f64>;

//! Interaction field matching at desk scale.
//!
//! Samples of a source distribution sit on the plate `z = 0` of an extended
//! space, samples of a target distribution on `z = L`. Each matched
//! source/target pair is joined by a localized "string" field; the field of
//! a whole transport plan is the average of its pair fields. Following the
//! field from `z = 0` to `z = L` carries the source distribution onto the
//! target one.
//!
//! Module map:
//! - [`types`]: geometry, points, clouds, pair batches, field vectors
//! - [`string_field`]: closed-form field of a single pair
//! - [`superposition`]: plan-averaged fields and normalization
//! - [`plans`]: independent and minibatch-OT pair sampling
//! - [`electrostatic`]: the Coulomb capacitor baseline and its stochastic transfer map
//! - [`trainer`], [`nn`], [`checkpoint`]: the neural field regressor
//! - [`sampler`]: z-parameterized Euler transfer
//! - [`verification`], [`quadrature`], [`two_sample`]: numerical certification
//! - [`data`]: toy generators and CSV persistence

pub mod assignment;
pub mod checkpoint;
pub mod data;
pub mod electrostatic;
pub mod error;
pub mod nn;
pub mod plans;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod string_field;
pub mod superposition;
pub mod trainer;
pub mod two_sample;
pub mod types;
pub mod verification;

pub use error::{IfmError, Result};
pub use plans::{Plan, PlanKind};
pub use rng::SeedStreams;
pub use superposition::{normalize_field, superpose_field, Normalized, StringKernel};
pub use types::{
    validate_geometry, ExtendedPoint, FieldVector, PairBatch, Plate, PlateGeometry, PointCloud, StringParams,
};

//! Finite-difference laboratory for orthogonal splittings along Ricci flow.

pub mod calc;
pub mod chart;
pub mod commutators;
pub mod curvature_invariants;
pub mod error;
pub mod evolution;
pub mod expr;
pub mod fd;
pub mod flow;
pub mod geometry;
pub mod linalg;
pub mod models;
pub mod scalar;
pub mod splitting;
pub mod tensor;
pub mod verifier;

pub use chart::{Axis, Factor, ProductChart, Role};
pub use error::{Error, Result};
pub use fd::Order;
pub use scalar::Real;
pub use tensor::{Slot, Symmetry, TensorField};

pub type Field = tensor::TensorField<f64>;
pub type Metric = geometry::MetricField<f64>;
pub type Geometry = geometry::GeometryPackage<f64>;

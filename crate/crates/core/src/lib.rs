//! Numerical laboratory for the hyperbolic Dirichlet-to-Neumann inverse problem on the unit disk.
//!
//! The wave operator is a first-order (magnetic) perturbation of the Laplace–Beltrami operator,
//!
//! ```text
//! P u = -(1/√det g) (∂_j - i b_j) √det g g^{ij} (∂_i - i b_i) u + q u,
//! ```
//!
//! with a Riemannian metric `g`, a real covector field `b` and a real potential `q`. The crate
//! provides forward simulation (full-wave leapfrog and geometric-optics asymptotics), geodesic
//! ray transforms with their inversion, the boundary-fixing gauge group, and the staged recovery
//! pipeline that reconstructs `(g, b, q)` modulo gauge.

pub mod charts;
pub mod config;
pub mod error;
pub mod fields;
pub mod formats;
pub mod gauge;
pub mod geodesics;
pub mod linalg;
pub mod manifold;
pub mod norms;
pub mod recovery;
pub mod registry;
pub mod wavesolver;
pub mod wkb;
pub mod xray;

pub use error::{Error, Result};
pub use fields::{CovectorField, MetricField, ScalarField};
pub use manifold::{CoefficientTriple, Domain};

/// A point of the plane in fixed global Cartesian coordinates.
pub type Point = nalgebra::Vector2<f64>;
/// A covector or vector in Cartesian components.
pub type Vec2 = nalgebra::Vector2<f64>;
/// A 2×2 matrix (metric tensors, jacobians).
pub type Mat2 = nalgebra::Matrix2<f64>;
pub use num_complex::Complex64 as C64;

/// Crate version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

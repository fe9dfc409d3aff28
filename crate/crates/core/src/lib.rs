//! Numerical laboratory for quaternionic geometry and its standard circle quotient.
//!
//! The crate builds, in coordinates, the associated rotation-frame bundle with a
//! scale factor over a quaternionic manifold, equips it with a one-parameter family
//! of almost complex structure triples, computes the momentum-type map of a lifted
//! circle action, and cuts down to the reduced space where an integrable triple
//! appears. Everything is organized around explicit charts: fields are closures
//! evaluated through a forward-mode dual-number tower, with central finite
//! differences as an independent oracle.

pub mod bundle;
pub mod chart;
pub mod consts;
pub mod error;
pub mod kernel;
pub mod models;
pub mod moment;
pub mod reduction;
pub mod quaternionic;
pub mod real;
pub mod so3;
pub mod tensor;

pub use chart::ChartBox;
pub use error::{GeomError, Result};
pub use kernel::{DerivativeEngine, DiffMode};
pub use real::{ChartMap, ChartMapG, Dual, Lift, Real, D1, D2, D3, D4};
pub use tensor::SqMat;

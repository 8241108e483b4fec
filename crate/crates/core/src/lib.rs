//! Multi-adaptive continuous and discontinuous Galerkin time integrators
//! (mcG(q) and mdG(q)) with individual time steps per component, explicit
//! fixed-point iteration on time slabs, adaptive stabilization for stiff
//! problems and a posteriori error control through a linearized dual problem.

pub mod bench;
pub mod controller;
pub mod dual;
pub mod error;
pub mod mesh;
pub mod method;
pub mod problems;
pub mod solver;

pub use error::{Error, Result};
pub use method::{Method, MethodKind};
pub use problems::{EvalCounter, OdeProblem};

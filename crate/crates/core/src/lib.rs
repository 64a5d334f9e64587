//! Numerical toolkit for growth-rate algebra on the real line, evolution
//! h-semigroups and h-dichotomies of finite-dimensional linear systems.
//!
//! Everything is computed in mu-coordinates `mu = ln h`, where the group law
//! of `R_*` is ordinary addition and the invariant measure is Lebesgue
//! measure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebra;
pub mod audit;
pub mod dichotomy;
pub mod error;
pub mod family;
pub mod fit;
pub mod green;
pub mod growth_rate;
pub mod linalg;
pub mod measure;
pub mod ode;
pub mod runner;
pub mod scenario;
pub mod semigroup;

pub use algebra::{HInterval, HPoint};
pub use error::{Error, Result};
pub use family::{EvolutionFamily, FamilySource, HBoundCertificate};
pub use growth_rate::{BuiltinKind, GrowthRate, RateKind};
pub use measure::{MuQuadratureSpec, QuadratureMethod};

//! Partial identification for instrumental-variable models under continuous
//! relaxations of instrument validity.
//!
//! The crate computes identified sets, falsification frontiers (the smallest
//! relaxations at which observed data stop refuting the model), and
//! falsification adaptive sets (the union of identified sets along the
//! frontier) for:
//!
//! * the classical linear model with multiple instruments
//!   ([`linear_iv`]), where exclusion restrictions are relaxed to
//!   `|gamma_l| <= delta_l`;
//! * heterogeneous-treatment-effect models with binary outcomes
//!   ([`het_binary`]) or continuous outcomes ([`het_continuous`]), where
//!   instrument independence is relaxed to c-dependence.
//!
//! [`moments`] turns raw data or covariance matrices into the linear model's
//! sufficient statistics, and [`geometry`] provides the shared LP / polytope
//! kernel.

pub mod geometry;
pub mod het_binary;
pub mod het_continuous;
pub mod linear_iv;
pub mod moments;

pub use geometry::{AffineImageSet, ConvexSet, Polytope};
pub use het_binary::{CDependence, DiscreteJoint, HetIdentifiedSet};
pub use het_continuous::{ConditionalDensityTable, PiecewiseDensity, SieveSpec};
pub use linear_iv::{
    BreakdownCurve, FasResult, FrontierCurve, LinearIdentifiedSet, RelaxationVector,
};
pub use moments::{MomentSet, ReducedMoments, SampleData, TwoSlsEstimate, VariableRole};

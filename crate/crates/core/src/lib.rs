//! Numerical laboratory for multidimensional backward stochastic
//! differential equations with weakly monotone generators.
//!
//! The crate provides:
//!
//! * [`model`]: grids, path ensembles, generators, terminal data,
//!   discrete solutions and empirical S^p / M^p norms;
//! * [`modulus`]: the concave-modulus calculus (growth bounds, the upper
//!   concave hull, order transformations, the Osgood divergence classifier
//!   and the Bihari bound);
//! * [`conditions`]: sampling falsifiers for the structural conditions a
//!   generator can claim;
//! * [`generators`]: built-in generator and terminal-condition families,
//!   plus the radial truncation scheme;
//! * [`brownian`]: reproducible counter-based Brownian ensembles;
//! * [`solver`]: the backward regression Monte Carlo solver;
//! * [`estimates`]: empirical verification of the a priori moment
//!   estimates with an explicit constant ledger;
//! * [`harness`]: reproducible uniqueness / stability / comparison /
//!   convergence experiments with pass-fail gates.

// Guards of the form `!(p > 1.0)` also reject NaN; the de-negated
// comparison would not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brownian;
pub mod conditions;
pub mod estimates;
pub mod generators;
pub mod harness;
pub mod model;
pub mod modulus;
pub mod quad;
pub mod rng;
pub mod solver;

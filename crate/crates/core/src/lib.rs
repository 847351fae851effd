//! Ordinal latent variable model of conflict intensity for event data.
//!
//! Events are reduced to `(subject, predicate, quantifier, object)` tuples and
//! explained by a mixture whose classes are ordered from least to most
//! intense. Posterior inference uses NUTS over an unconstrained
//! parameterization.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod dists;
pub mod error;
pub mod eval;
pub mod infer;
pub mod model;
pub mod ordered;
pub mod simplex;
pub mod timeseries;

pub use error::{Error, Result};

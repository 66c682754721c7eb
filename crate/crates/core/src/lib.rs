//! Adaptive allocation of a sampling budget across many categorical
//! sources, with posterior-interval variance bounds, plus the batch
//! planner and analytics for stratified surveys.

// Negated float comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod bounds;
pub mod error;
pub mod posterior;
pub mod simulator;
pub mod survey;

pub use error::{Error, Result};

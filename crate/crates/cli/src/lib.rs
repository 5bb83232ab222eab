//! Instance generation, experiment orchestration and artifact serialisation.

// negated comparisons are how NaN inputs get rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compare;
pub mod config;
pub mod generators;
pub mod run;

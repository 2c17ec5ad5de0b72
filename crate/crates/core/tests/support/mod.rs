//! Helpers shared by the integration tests and the acceptance run.
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod augment;
pub mod grad;
pub mod metrics;

//! Crossbred random forest engine.
//!
//! Grows a bagged random-subspace forest, decomposes every tree into
//! root-to-leaf branches, scores branches on training data, prunes them by
//! accuracy or impact-factor thresholds, and predicts by branch voting with
//! a fallback decision for inputs no surviving branch covers.

pub mod branches;
pub mod dataset;
pub mod error;
pub mod forest;
pub mod predict;
pub mod seed;

pub use error::{CrfError, Result};

//! Training-time responsibility tracking for neural network classifiers.
//!
//! Every SGD step records how much each tracked weight moved and credits that
//! movement to the examples in the batch. The resulting ledger answers "which
//! training examples shaped this weight", which in turn drives example-based
//! explanations of individual predictions.

pub(crate) mod binio;
pub mod dataset;
pub mod eval;
pub mod experiments;
pub mod explain;
mod error;
pub mod ledger;
pub mod nn;
pub mod probe;

pub use error::{Error, Result};

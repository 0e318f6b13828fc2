//! Phase estimation with unbalanced cat states under photon loss.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channels;
pub mod cli;
pub mod error;
pub mod fock;
pub mod measurement;
pub mod precision;
pub mod qfi;
pub mod states;

pub use error::{Error, Result};

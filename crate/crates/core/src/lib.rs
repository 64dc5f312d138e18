//! Active preference optimization for contextual Bradley–Terry–Luce bandits.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apo_gen;
pub mod design;
pub mod error;
pub mod estimation;
pub mod instances;
pub mod learners;
pub mod harness;
pub mod model;
pub mod theory;

pub use error::{Error, Result};
pub use model::{Instance, Matrix, Policy, PreferenceSample, Triplet, Vector};

//! Two-stage detection of rare span start points.
//!
//! Documents are chunked, a bag-of-n-grams logistic regression retrieves
//! candidate chunks, a linear-chain CRF tags start points inside chunks, and
//! the evaluation harness compares training-set sampling strategies and
//! test-time filtering modes under k-fold cross-validation.

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod optim;
pub mod retrieval;
pub mod sampling;
pub mod tagger;

pub use error::{Error, Result};

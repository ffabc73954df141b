//! Stylometric text classification: corpus loading, lexical, syntactic and
//! discourse features, regularized logistic regression, cross-validated
//! evaluation and feature analysis.

pub mod analysis;
pub mod corpus;
pub mod discourse;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod lexicon;
pub mod logreg;
pub mod par;
pub mod seed;
pub mod syntax;

pub use error::{Error, Result};

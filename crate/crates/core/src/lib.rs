//! Persona alignment toolkit.
//!
//! The crate covers the data and training side of aligning a role-play
//! chatbot to a set of character personas:
//!
//! - [`corpus`]: JSONL records (personas, QA pairs, preference pairs,
//!   annotations) and seed-cohesive train/test splits.
//! - [`augment`]: back-translation and self-instruct expansion with a
//!   ROUGE-L redundancy filter.
//! - [`annotate`]: 0/1/2 vote aggregation, preference-pair construction,
//!   reward-model labelling and judge agreement.
//! - [`model`]: the trainable policy abstraction and a tiny reference model.
//! - [`train`]: SFT, reward-model and DPO objectives and loops.
//! - [`metrics`]: ROUGE-L, accuracy, Macro-F1 and the evaluation report.

pub mod annotate;
pub mod augment;
pub mod corpus;
mod error;
pub mod metrics;
pub mod model;
pub mod train;

pub use error::{Error, Result};

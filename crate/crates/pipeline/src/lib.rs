//! Stage runner for the persona alignment pipeline.
//!
//! Stages run in a fixed order (see [`Stage`]) inside a workdir whose
//! artifacts are content-addressed and never rewritten. Each run records a
//! manifest of its config hash, input hashes and seed; rerunning with the
//! same triple is a cache hit.

pub mod config;
pub mod doctor;
mod error;
mod runner;
mod serve;
mod stage;
mod stages;
pub mod store;

pub use config::{Overrides, PipelineConfig};
pub use doctor::{doctor, DoctorReport, Issue, Status};
pub use error::{PipelineError, Result};
pub use runner::{Pipeline, StageManifest, StageOutcome};
pub use serve::studio_from_workdir;
pub use stage::Stage;

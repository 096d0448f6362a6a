//! Calibration-based pruning of a toy vision+language classifier and its
//! restoration with mask-preserving low-rank adapters.
//!
//! The pipeline is: [`datagen`] builds seeded two-modality data,
//! [`pretrain`] fits the dense model, [`pruning`] scores and masks it,
//! [`lora`] trains masked adapters against a task + distillation objective
//! ([`objectives`]) and merges them without breaking the sparsity pattern.
//! [`planner`] sweeps how sparsity is split between the modalities.

pub mod datagen;
pub mod error;
pub mod experiment;
pub mod harness;
pub mod io;
pub mod lora;
pub mod model;
pub mod numeric;
pub mod objectives;
pub mod planner;
pub mod pretrain;
pub mod pruning;
pub mod verify;

pub use error::{Error, Result};

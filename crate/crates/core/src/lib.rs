//! Three-phase multimodal math error detection with an evaluation harness.

pub mod analyzer;
pub mod backend;
pub mod cli;
pub mod consistency;
pub mod data_model;
pub mod formal_language;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod synthetic;
pub mod visual;

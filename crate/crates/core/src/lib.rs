//! Core library of the CAI framework: a desk-scale, serverless-style
//! distributed inference pipeline for galaxy redshift prediction.
//!
//! The pieces mirror a FaaS deployment: a content-integrity blob [`store`],
//! the binary [`dataset`] format and partition planner, a deterministic
//! reference [`model`], a worker [`runtime`] with resource limits and a wire
//! protocol, the workflow [`orchestrator`], and cost/throughput
//! [`analytics`].

pub mod analytics;
pub mod dataset;
pub mod model;
pub mod orchestrator;
pub mod runtime;
pub mod store;

//! Trace-driven discrete-event simulator for the prefill tier of a
//! disaggregated LLM serving system with length-aware scheduling.
//!
//! Times are milliseconds and lengths are tokens throughout.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod controller;
pub mod cost_model;
pub mod engine;
pub mod metrics;
pub mod queueing;
pub mod scheduler;
pub mod sweep;
pub mod validation;
pub mod workload;

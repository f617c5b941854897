//! Command-line pipeline for landmark-driven multi-talker speech
//! enhancement: dataset preparation, oracle-mask analysis, training,
//! enhancement, and SDR evaluation.

pub mod commands;
pub mod config;
pub mod fixture;
pub mod pipeline;
pub mod render;

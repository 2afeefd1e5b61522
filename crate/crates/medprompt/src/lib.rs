//! Command-line tool and HTTP service for planning and running medical
//! image analysis tasks against a registry of trained weights.

pub mod backend;
pub mod cli;
pub mod config;
pub mod eval_runner;
pub mod imaging;
pub mod limit;
pub mod llm;
pub mod pipeline;
pub mod scan;
pub mod server;
pub mod wire;

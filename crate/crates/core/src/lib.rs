//! Core of the medprompt planner.
//!
//! Turns weight filenames into a routable registry, normalizes free-text
//! targets and modalities against it, scores and selects weights for each
//! planned task, and executes conditional plans against an abstract
//! inference backend. Everything here is `no_std` + `alloc`; filesystem,
//! network and image decoding live in the `medprompt` crate.
#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dag;
pub mod embed;
pub mod engine;
pub mod eval;
pub mod labels;
pub mod naming;
pub mod normalize;
pub mod offline;
pub mod plan;
pub mod prompt;
pub mod registry;
pub mod resolve;
pub mod router;
pub mod stub;
pub mod text;

// Copyright 2026 The copal Authors
// SPDX-License-Identifier: Apache-2.0

//! Continual pruning of a small byte-level network: sensitivity-guided
//! importance accumulation over a sequence of calibration datasets, magnitude
//! and activation-weighted baselines, and an experiment harness measuring
//! perplexity and backward transfer over dataset orderings.

pub(crate) mod binfmt;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod importance;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod pruner;
pub mod seeds;
pub mod sensitivity;
pub mod trainer;

pub use error::{Error, Result};

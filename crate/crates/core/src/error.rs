// Copyright 2026 The copal Authors
// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("format error in `{field}`: {message}")]
    Format { field: String, message: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("incomplete grid, missing cells: {}", .0.join(", "))]
    Completeness(Vec<String>),

    #[error("training diverged at step {step} (loss = {loss}); try a smaller learning_rate")]
    Training { step: usize, loss: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format { field: field.into(), message: message.into() }
    }
}

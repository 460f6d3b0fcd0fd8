// SPDX-License-Identifier: Apache-2.0
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("solver did not converge after {iterations} iterations (last residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("indeterminate CRS state: top gap {top:e} m, bottom gap {bottom:e} m")]
    Indeterminate { top: f64, bottom: f64 },

    #[error("threshold extraction failed: {0}")]
    Extraction(String),

    #[error("execution error at step {step}: {message}")]
    Execution { step: usize, message: String },

    #[error("pulse calibration failed: {0}")]
    Calibration(String),

    #[error("parameter file line {line}: {message}")]
    ParamFile { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

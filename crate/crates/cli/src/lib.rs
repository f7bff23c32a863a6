//! Experiment harness for the saturated gKdV toolkit: JSON configuration,
//! initial data, the evolve/track/classify pipeline with manifests, and the
//! small-saturation scaling study.

pub mod config;
pub mod experiment;
pub mod initial;
pub mod study;

use std::fmt::Display;
use std::sync::{Arc, Mutex, OnceLock};

use satgkdv::modulation::ProfileBank;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl HarnessError {
    pub fn numerical(e: impl Display) -> Self {
        HarnessError::Numerical(e.to_string())
    }

    pub fn io(e: impl Display) -> Self {
        HarnessError::Config(format!("i/o: {e}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numerical(_) => 3,
        }
    }
}

/// Process-wide profile bank for `q`, built on first use.
pub fn bank(q: f64) -> Result<Arc<ProfileBank>, HarnessError> {
    static BANKS: OnceLock<Mutex<Vec<(u64, Arc<ProfileBank>)>>> = OnceLock::new();
    let mut banks = BANKS.get_or_init(|| Mutex::new(Vec::new())).lock().unwrap_or_else(|p| p.into_inner());
    if let Some((_, b)) = banks.iter().find(|(k, _)| *k == q.to_bits()) {
        return Ok(b.clone());
    }
    let b = ProfileBank::shared(q).map_err(HarnessError::numerical)?;
    banks.push((q.to_bits(), b.clone()));
    Ok(b)
}

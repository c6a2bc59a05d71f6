//! The three hGNBP-NBFA Gibbs samplers, the GNBP-PFA and GNBP-DCMLDA
//! baselines, shared global-parameter updates, and η inference.

mod blocked;
mod chain;
mod collapsed;
mod cp_blocked;
mod eta;
mod shared;

pub use blocked::blocked_step;
pub use chain::{
    resume_chain, run_chain, step_once, ChainCheckpoint, ChainTrace, Collector,
    CountingCollector, TraceRow, CHECKPOINT_VERSION,
};
pub use collapsed::{collapsed_step, dcmlda_collapsed_step, pfa_collapsed_step};
pub use cp_blocked::cp_blocked_step;
pub use eta::sample_eta;
pub use shared::log_joint_surrogate;

use crate::error::{Error, Result};
use crate::model::{Hyperparams, ModelKind, Representation, TruncationMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Blocked,
    Collapsed,
    CpBlocked,
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SamplerKind::Blocked => write!(f, "blocked"),
            SamplerKind::Collapsed => write!(f, "collapsed"),
            SamplerKind::CpBlocked => write!(f, "cp-blocked"),
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blocked" => Ok(SamplerKind::Blocked),
            "collapsed" => Ok(SamplerKind::Collapsed),
            "cp" | "cp-blocked" => Ok(SamplerKind::CpBlocked),
            other => Err(Error::Config(format!(
                "unknown sampler {other:?} (expected blocked, collapsed, or cp)"
            ))),
        }
    }
}

impl SamplerKind {
    pub fn representation(self) -> Representation {
        match self {
            SamplerKind::Blocked => Representation::Blocked,
            SamplerKind::Collapsed => Representation::Collapsed,
            SamplerKind::CpBlocked => Representation::CpBlocked,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EtaMode {
    Fixed(f64),
    Sampled,
}

impl EtaMode {
    pub fn initial_value(self) -> f64 {
        match self {
            EtaMode::Fixed(v) => v,
            EtaMode::Sampled => 1.0,
        }
    }
}

impl std::str::FromStr for EtaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "sample" || s == "sampled" {
            return Ok(EtaMode::Sampled);
        }
        let v: f64 = s.parse().map_err(|_| {
            Error::Config(format!("--eta expects a positive value or 'sample', got {s:?}"))
        })?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Config(format!("eta must be positive, got {v}")));
        }
        Ok(EtaMode::Fixed(v))
    }
}

/// Full sampler configuration for one chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub model: ModelKind,
    pub sampler: SamplerKind,
    pub iterations: usize,
    pub burn_in: usize,
    pub collect_every: usize,
    pub k_init: usize,
    pub k_star: usize,
    pub truncation: TruncationMode,
    pub seed: u64,
    pub eta: EtaMode,
    pub hyper: Hyperparams,
}

impl ChainConfig {
    /// Paper experimental schedule: 5000 iterations, first 2500 discarded,
    /// every 5th collected afterwards, K init 400, K_star 20, a0=b0=0.01,
    /// e0=f0=1.
    pub fn paper_defaults(model: ModelKind, sampler: SamplerKind, seed: u64) -> Self {
        ChainConfig {
            model,
            sampler,
            iterations: 5000,
            burn_in: 2500,
            collect_every: 5,
            k_init: 400,
            k_star: 20,
            truncation: TruncationMode::Adaptive,
            seed,
            eta: EtaMode::Fixed(0.05),
            hyper: Hyperparams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.collect_every == 0 {
            return Err(Error::Config("collect_every must be >= 1".into()));
        }
        let compatible = match (self.model, self.sampler) {
            (_, SamplerKind::Collapsed) => true,
            (ModelKind::Nbfa | ModelKind::Dcmlda, SamplerKind::Blocked) => true,
            (ModelKind::Nbfa | ModelKind::Dcmlda, SamplerKind::CpBlocked) => true,
            (ModelKind::Pfa, _) => false,
        };
        if !compatible {
            return Err(Error::Config(format!(
                "sampler {} does not support model {} (PFA runs collapsed only)",
                self.sampler, self.model
            )));
        }
        if self.k_init == 0 && self.sampler != SamplerKind::Collapsed {
            return Err(Error::Config("K_init = 0 requires the collapsed sampler".into()));
        }
        if self.truncation == TruncationMode::Adaptive && self.k_star == 0 {
            return Err(Error::Config("adaptive truncation needs K_star >= 1".into()));
        }
        if self.truncation == TruncationMode::Fixed && self.k_init == 0 {
            return Err(Error::Config("fixed truncation needs K_init >= 1".into()));
        }
        Ok(())
    }
}

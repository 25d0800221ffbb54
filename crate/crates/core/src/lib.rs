//! Deterministic discrete-time simulator and library for provisioning LLM
//! agent services over a satellite-plus-ground-BS network.
//!
//! The crate is organized along the pipeline:
//!
//! - [`domain`] / [`config`]: entities, scenario configuration, validation.
//! - [`link`]: satellite pass geometry and shared-spectrum uplink rates.
//! - [`cot`] / [`oracle`]: context token and age-of-thought dynamics, the
//!   accuracy model, and the exact finite-model posterior-gap oracle.
//! - [`caching`]: per-operator cache state machine with least-AoT, FIFO, and
//!   LFU replacement.
//! - [`cost`]: switching, transmission, compute, accuracy, and cloud costs.
//! - [`market`]: valuations, the scaled second-bid mechanism, baselines, and
//!   contract pricing.
//! - [`rl`]: from-scratch deep Q-network selecting the price scaling factor.
//! - [`sim`]: the scenario engine and sweeps.
//! - [`verify`]: independent brute-force oracles and property fuzzers.

pub mod caching;
pub mod config;
pub mod cost;
pub mod cot;
pub mod domain;
pub mod link;
pub mod market;
pub mod oracle;
pub mod rl;
pub mod sim;
pub mod verify;

pub use caching::{CacheDecision, CacheEvent, CachePolicy, OperatorCacheState};
pub use config::{parse_config, render_config, ConfigError};
pub use cost::CostBreakdown;
pub use cot::ContextState;
pub use domain::{
    derive_beta, validate_config, DecayMode, LlmModel, ModelId, Operator, OperatorId,
    OperatorKind, RequestMatrix, ScenarioConfig, ScenarioShape, Service, ServiceId, TrainConfig,
    User, Violation,
};
pub use link::{LinkBudget, SatelliteGeometry};
pub use market::{BidProfile, MechanismOutcome, Valuation};
pub use oracle::{FiniteLatentModel, PosteriorGapReport};
pub use rl::QNetwork;
pub use sim::{ScenarioResult, SlotTrace};
pub use verify::OracleReport;

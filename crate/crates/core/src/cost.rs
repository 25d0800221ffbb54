//! Per-slot cost components of one operator.
//!
//! Edge costs cover model switching, user-to-BS plus backhaul transmission,
//! edge compute time, and the accuracy penalty of serving with an imperfect
//! cached context. Requests routed to the cloud (offloaded or missing a
//! cached model) are billed per request at the model's cloud unit cost times
//! the operator's cloud access factor.

use std::collections::BTreeMap;

use crate::caching::{CacheDecision, PairKey};
use crate::domain::{ModelId, ScenarioConfig};

/// Bits per MB of input payload (decimal megabytes).
pub const BITS_PER_MB: f64 = 8e6;

/// Cost components of one operator for one slot; all in cost-units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub switching: f64,
    pub transmission: f64,
    pub compute: f64,
    pub accuracy: f64,
    pub cloud: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.switching + self.transmission + self.compute + self.accuracy + self.cloud
    }

    /// Edge-side share (everything but the cloud component).
    pub fn edge_total(&self) -> f64 {
        self.switching + self.transmission + self.compute + self.accuracy
    }
}

/// Switching cost: `lambda` per fresh model load. Evictions are free; only
/// the load indicator `a^t = 1 and a^{t-1} = 0` counts.
pub fn switching_cost(prev: &CacheDecision, decision: &CacheDecision, lambda: f64) -> f64 {
    let loads = decision
        .cached_pairs()
        .filter(|&pair| !prev.is_cached(pair))
        .count();
    lambda * loads as f64
}

/// Transmission cost of input prompts and results:
/// `access * sum R * (d_i / mean_rate + (d_i / core_rate) * cloud_share)`.
///
/// `mean_rate` is the cohort's expected uplink rate and `core_rate` the
/// backhaul rate, both in bit/s; the backhaul term applies to the cloud
/// share only.
pub fn transmission_cost(
    decision: &CacheDecision,
    requests: &BTreeMap<PairKey, u64>,
    cfg: &ScenarioConfig,
    mean_rate: f64,
    core_rate: f64,
    access_cost: f64,
) -> f64 {
    let mut cost = 0.0;
    for (&pair, &r) in requests {
        if r == 0 {
            continue;
        }
        let Some(service) = cfg.service(pair.0) else { continue };
        let bits = service.input_size_mb * BITS_PER_MB;
        let per_request = bits / mean_rate + (bits / core_rate) * decision.cloud_share(pair);
        cost += r as f64 * per_request;
    }
    access_cost * cost
}

/// Edge inference latency cost: `sum delta * e_m / f_n` with
/// `delta = edge_share * R * k_i` tokens.
pub fn compute_cost(
    decision: &CacheDecision,
    requests: &BTreeMap<PairKey, u64>,
    cfg: &ScenarioConfig,
    compute_rate: f64,
) -> f64 {
    let mut cost = 0.0;
    for (&pair, &r) in requests {
        if r == 0 {
            continue;
        }
        let (Some(service), Some(model)) = (cfg.service(pair.0), cfg.model(pair.1)) else {
            continue;
        };
        let delta =
            decision.edge_share(pair) * r as f64 * service.cot_example_tokens as f64;
        cost += delta * model.energy_per_token / compute_rate;
    }
    cost
}

/// Accuracy cost of edge-served batches: `sum unit_cost * R * edge_share`.
///
/// Unit costs come from the context-dependent accuracy model, evaluated at
/// the slot's post-update kappa.
pub fn accuracy_cost(
    decision: &CacheDecision,
    requests: &BTreeMap<PairKey, u64>,
    unit_costs: &BTreeMap<PairKey, f64>,
) -> f64 {
    let mut cost = 0.0;
    for (&pair, &r) in requests {
        if r == 0 {
            continue;
        }
        let unit = unit_costs.get(&pair).copied().unwrap_or(0.0);
        cost += unit * r as f64 * decision.edge_share(pair);
    }
    cost
}

/// Cloud processing cost of one operator's row:
/// `sum unit_cost(m) * cloud_share * R`. With the default (empty) decision
/// every request carries cloud share one, which covers the relaying
/// satellite.
pub fn cloud_cost(
    decision: &CacheDecision,
    requests: &BTreeMap<PairKey, u64>,
    unit_costs: &BTreeMap<ModelId, f64>,
) -> f64 {
    let mut cost = 0.0;
    for (&pair, &r) in requests {
        if r == 0 {
            continue;
        }
        let unit = unit_costs.get(&pair.1).copied().unwrap_or(0.0);
        cost += unit * decision.cloud_share(pair) * r as f64;
    }
    cost
}

/// Time-averaged total over a horizon: `(1/T) * sum_t total_t`.
pub fn total_cost(per_slot: &[CostBreakdown]) -> f64 {
    if per_slot.is_empty() {
        return 0.0;
    }
    per_slot.iter().map(CostBreakdown::total).sum::<f64>() / per_slot.len() as f64
}

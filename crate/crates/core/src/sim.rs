//! Discrete-time scenario engine.
//!
//! Each slot: draw Poisson request counts per (operator, service), run the
//! caching policy per ground BS, advance contexts, and price the slot.
//! Satellite traffic relays wholly to the cloud. On top of per-slot traces
//! the module derives operator valuations, parameter sweeps, and the jittered
//! bid stream feeding the auction layer.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use thiserror::Error;

use crate::caching::{self, CacheDecision, CacheEvent, CachePolicy, OperatorCacheState, PairKey};
use crate::cost::{self, CostBreakdown, BITS_PER_MB};
use crate::cot::{self, ContextState};
use crate::domain::{
    validate_config, ModelId, OperatorId, RequestMatrix, ScenarioConfig, ServiceId, Violation,
};
use crate::link::{self, LinkBudget};
use crate::market::{self, BidProfile, Valuation};
use crate::rl::{MarketEnv, MarketRound};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config failed validation with {} violation(s)", .0.len())]
    InvalidConfig(Vec<Violation>),
    #[error("scenario has no ground operators")]
    NoGroundOperators,
    #[error(transparent)]
    Market(#[from] market::MarketError),
}

/// Everything recorded for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotTrace {
    pub slot: u64,
    pub requests: BTreeMap<(OperatorId, ServiceId, ModelId), u64>,
    pub costs: BTreeMap<OperatorId, CostBreakdown>,
    pub events: BTreeMap<OperatorId, Vec<CacheEvent>>,
    /// Post-update context of every cached pair.
    pub contexts: BTreeMap<(OperatorId, ServiceId, ModelId), ContextState>,
    /// Per-operator context gain `sum kappa * ln(1/beta)` after the update.
    pub match_gains: BTreeMap<OperatorId, f64>,
    /// Per-operator (sum of per-request performance gain, edge requests).
    pub performance: BTreeMap<OperatorId, (f64, f64)>,
}

/// A finished run: traces plus derived per-operator aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub policy: CachePolicy,
    pub seed: u64,
    pub traces: Vec<SlotTrace>,
    /// Time-averaged total cost per operator.
    pub averages: BTreeMap<OperatorId, f64>,
    pub valuations: BTreeMap<OperatorId, Valuation>,
}

impl ScenarioResult {
    /// Mean of the ground operators' time-averaged totals: the headline
    /// cost a policy is judged on.
    pub fn mean_ground_total(&self) -> f64 {
        let grounds: Vec<f64> = self
            .averages
            .iter()
            .filter(|(op, _)| **op != 0)
            .map(|(_, v)| *v)
            .collect();
        grounds.iter().sum::<f64>() / grounds.len().max(1) as f64
    }

    /// Mean per-slot accuracy cost across ground operators.
    pub fn mean_accuracy_cost(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for trace in &self.traces {
            for (&op, cost) in &trace.costs {
                if op != 0 {
                    sum += cost.accuracy;
                    count += 1;
                }
            }
        }
        sum / count.max(1) as f64
    }

    /// Mean per-request performance gain over every edge-served request.
    pub fn mean_performance_gain(&self) -> f64 {
        let mut gain = 0.0;
        let mut requests = 0.0;
        for trace in &self.traces {
            for (gain_sum, served) in trace.performance.values() {
                gain += gain_sum;
                requests += served;
            }
        }
        if requests > 0.0 {
            gain / requests
        } else {
            0.0
        }
    }

    /// Mean per-slot cost component vector over ground operators.
    pub fn mean_ground_components(&self) -> CostBreakdown {
        let mut acc = CostBreakdown::default();
        let mut count = 0usize;
        for trace in &self.traces {
            for (&op, cost) in &trace.costs {
                if op != 0 {
                    acc.switching += cost.switching;
                    acc.transmission += cost.transmission;
                    acc.compute += cost.compute;
                    acc.accuracy += cost.accuracy;
                    acc.cloud += cost.cloud;
                    count += 1;
                }
            }
        }
        let n = count.max(1) as f64;
        CostBreakdown {
            switching: acc.switching / n,
            transmission: acc.transmission / n,
            compute: acc.compute / n,
            accuracy: acc.accuracy / n,
            cloud: acc.cloud / n,
        }
    }
}

/// Draw one slot of request counts: independent Poisson per (operator,
/// service) with intensity equal to the cohort's summed request rate,
/// routed to the service's affinity model.
pub fn generate_requests(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig, slot: u64) -> RequestMatrix {
    let mut entries = BTreeMap::new();
    for op in &cfg.operators {
        let intensity = op.request_intensity();
        for service in &cfg.services {
            let count = if intensity > 0.0 {
                Poisson::new(intensity).expect("positive intensity").sample(rng) as u64
            } else {
                0
            };
            if count > 0 {
                entries.insert((op.id, service.id, service.affinity_model), count);
            }
        }
    }
    RequestMatrix { slot, entries }
}

fn mean_rates(cfg: &ScenarioConfig) -> BTreeMap<OperatorId, f64> {
    cfg.operators
        .iter()
        .map(|op| {
            let budget = LinkBudget {
                bandwidth_hz: op.bandwidth_hz,
                noise_power_w: cfg.noise_power,
                users: op
                    .users
                    .iter()
                    .map(|u| (u.mean_channel_gain, u.transmit_power_w))
                    .collect(),
            };
            let rate = link::mean_uplink_rate(&budget).unwrap_or(f64::INFINITY);
            (op.id, rate)
        })
        .collect()
}

/// Run one scenario under one caching policy. Deterministic per seed.
pub fn run_scenario(cfg: &ScenarioConfig, policy: CachePolicy) -> Result<ScenarioResult, SimError> {
    let violations = validate_config(cfg);
    if !violations.is_empty() {
        return Err(SimError::InvalidConfig(violations));
    }
    if cfg.ground_operators().count() == 0 {
        return Err(SimError::NoGroundOperators);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let rates = mean_rates(cfg);
    let betas: BTreeMap<ModelId, f64> = cfg.models.iter().map(|m| (m.id, m.cot_gain_beta())).collect();

    let mut states: BTreeMap<OperatorId, OperatorCacheState> = cfg
        .ground_operators()
        .map(|op| (op.id, OperatorCacheState::new()))
        .collect();
    let mut prev_decisions: BTreeMap<OperatorId, CacheDecision> = cfg
        .operators
        .iter()
        .map(|op| (op.id, CacheDecision::default()))
        .collect();

    let mut traces = Vec::with_capacity(cfg.horizon_slots as usize);
    for slot in 0..cfg.horizon_slots {
        let requests = generate_requests(&mut rng, cfg, slot);
        let mut trace = SlotTrace {
            slot,
            requests: requests.entries.clone(),
            costs: BTreeMap::new(),
            events: BTreeMap::new(),
            contexts: BTreeMap::new(),
            match_gains: BTreeMap::new(),
            performance: BTreeMap::new(),
        };

        for op in &cfg.operators {
            let row = requests.operator_row(op.id);
            let (decision, events) = if op.is_satellite() {
                (CacheDecision::satellite(), Vec::new())
            } else {
                let state = states.get_mut(&op.id).expect("ground state");
                let decision = caching::step(policy, state, &row, op, cfg);
                let events = caching::apply_decision(state, &decision, &row, op, cfg)
                    .expect("policy decisions are feasible");
                (decision, events)
            };

            // Post-update contexts and the gain terms built on them.
            let mut match_gain = 0.0;
            let mut unit_costs: BTreeMap<PairKey, f64> = BTreeMap::new();
            let mut gain_sum = 0.0;
            let mut edge_requests = 0.0;
            if let Some(state) = states.get(&op.id) {
                for pair in state.cached_pairs() {
                    let ctx = state.context(pair);
                    trace.contexts.insert((op.id, pair.0, pair.1), ctx);
                    let beta = betas.get(&pair.1).copied().unwrap_or(0.0);
                    match_gain += ctx.aot * cot::log_gain(beta);
                }
                for (&pair, &r) in &row {
                    let Some(service) = cfg.service(pair.0) else { continue };
                    let alpha = service
                        .zero_shot_accuracy
                        .get(&pair.1)
                        .copied()
                        .unwrap_or(1.0);
                    let beta = betas.get(&pair.1).copied().unwrap_or(0.0);
                    let kappa = state.context(pair).aot;
                    unit_costs.insert(pair, cot::unit_accuracy_cost(alpha, beta, kappa));
                    let served = decision.edge_share(pair) * r as f64;
                    if served > 0.0 {
                        gain_sum += cot::accuracy(alpha, beta, kappa) * served;
                        edge_requests += served;
                    }
                }
            }

            let cloud_units: BTreeMap<ModelId, f64> = cfg
                .models
                .iter()
                .map(|m| (m.id, cfg.cloud_cost_of(op, m.id)))
                .collect();
            let prev = prev_decisions.get(&op.id).expect("all operators present");
            let breakdown = CostBreakdown {
                switching: cost::switching_cost(prev, &decision, op.switch_coeff),
                transmission: cost::transmission_cost(
                    &decision,
                    &row,
                    cfg,
                    rates[&op.id],
                    op.core_rate,
                    op.edge_access_cost,
                ),
                compute: if op.is_satellite() {
                    0.0
                } else {
                    cost::compute_cost(&decision, &row, cfg, op.compute_rate)
                },
                accuracy: cost::accuracy_cost(&decision, &row, &unit_costs),
                cloud: cost::cloud_cost(&decision, &row, &cloud_units),
            };

            trace.costs.insert(op.id, breakdown);
            trace.events.insert(op.id, events);
            trace.match_gains.insert(op.id, match_gain);
            trace.performance.insert(op.id, (gain_sum, edge_requests));
            prev_decisions.insert(op.id, decision);
        }
        traces.push(trace);
    }

    let mut averages = BTreeMap::new();
    let mut valuations = BTreeMap::new();
    for op in &cfg.operators {
        let costs: Vec<CostBreakdown> = traces.iter().map(|t| t.costs[&op.id]).collect();
        let gains: Vec<f64> = traces.iter().map(|t| t.match_gains[&op.id]).collect();
        averages.insert(op.id, cost::total_cost(&costs));
        valuations.insert(op.id, market::valuation_from_trace(&costs, &gains)?);
    }

    Ok(ScenarioResult { policy, seed: cfg.rng_seed, traces, averages, valuations })
}

/// Check the satellite's relayed traffic against its pass duration:
/// `sum d_i * R / (E[r] + r^C) <= coverage time`; returns the slack in
/// seconds (negative when infeasible).
pub fn satellite_relay_feasible(cfg: &ScenarioConfig, traces: &[SlotTrace]) -> (bool, f64) {
    let coverage = link::coverage_time(&cfg.geometry);
    let Some(sat) = cfg.satellite() else {
        return (true, coverage);
    };
    let rate = mean_rates(cfg)[&sat.id] + sat.core_rate;
    let mut used = 0.0;
    for trace in traces {
        for (&(op, service, _), &r) in &trace.requests {
            if op != sat.id || r == 0 {
                continue;
            }
            let Some(svc) = cfg.service(service) else { continue };
            used += svc.input_size_mb * BITS_PER_MB * r as f64 / rate;
        }
    }
    let slack = coverage - used;
    (slack >= 0.0, slack)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Slots,
    Services,
    Gpus,
    Users,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepAxis::Slots => write!(f, "slots"),
            SweepAxis::Services => write!(f, "services"),
            SweepAxis::Gpus => write!(f, "gpus"),
            SweepAxis::Users => write!(f, "users"),
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "slots" => Ok(SweepAxis::Slots),
            "services" => Ok(SweepAxis::Services),
            "gpus" => Ok(SweepAxis::Gpus),
            "users" => Ok(SweepAxis::Users),
            other => Err(format!("unknown sweep axis `{other}`")),
        }
    }
}

/// Derive a scenario from `base` with one axis changed. Services and users
/// are extended by cycling the existing entries; GPU counts rescale the
/// per-BS capacity constants.
pub fn derive_for_axis(base: &ScenarioConfig, axis: SweepAxis, value: u64) -> ScenarioConfig {
    use crate::domain::{GPU_GFLOPS, GPU_MEMORY_GB, GPU_POWER_W};
    let mut cfg = base.clone();
    match axis {
        SweepAxis::Slots => cfg.horizon_slots = value,
        SweepAxis::Services => {
            let templates = base.services.clone();
            let models = base.models.len() as u32;
            cfg.services = (0..value as u32)
                .map(|id| {
                    let mut s = templates[id as usize % templates.len()].clone();
                    s.id = id;
                    s.affinity_model = id % models;
                    s
                })
                .collect();
        }
        SweepAxis::Gpus => {
            for op in cfg.operators.iter_mut().filter(|o| !o.is_satellite()) {
                let gpus = value as f64;
                op.gpu_memory_gb = gpus * GPU_MEMORY_GB;
                op.gpu_energy_budget = gpus * GPU_GFLOPS * GPU_POWER_W;
                op.compute_rate = gpus * GPU_GFLOPS;
            }
        }
        SweepAxis::Users => {
            for op in cfg.operators.iter_mut() {
                let templates = op.users.clone();
                if templates.is_empty() {
                    continue;
                }
                op.users = (0..value as u32)
                    .map(|id| {
                        let mut u = templates[id as usize % templates.len()].clone();
                        u.id = id;
                        u
                    })
                    .collect();
            }
        }
    }
    cfg
}

/// One sweep cell: a full run reduced to its headline numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: u64,
    pub policy: CachePolicy,
    pub seed: u64,
    pub mean_total: f64,
    pub components: CostBreakdown,
    pub mean_accuracy_cost: f64,
    pub mean_performance_gain: f64,
}

/// Run every (value, policy) combination. Rows are ordered by the input
/// lists regardless of execution order.
pub fn sweep(
    cfg: &ScenarioConfig,
    axis: SweepAxis,
    values: &[u64],
    policies: &[CachePolicy],
) -> Result<Vec<SweepRow>, SimError> {
    use rayon::prelude::*;
    let cells: Vec<(u64, CachePolicy)> = values
        .iter()
        .flat_map(|&v| policies.iter().map(move |&p| (v, p)))
        .collect();
    let results: Vec<Result<SweepRow, SimError>> = cells
        .par_iter()
        .map(|&(value, policy)| {
            let derived = derive_for_axis(cfg, axis, value);
            let result = run_scenario(&derived, policy)?;
            Ok(SweepRow {
                axis,
                value,
                policy,
                seed: derived.rng_seed,
                mean_total: result.mean_ground_total(),
                components: result.mean_ground_components(),
                mean_accuracy_cost: result.mean_accuracy_cost(),
                mean_performance_gain: result.mean_performance_gain(),
            })
        })
        .collect();
    results.into_iter().collect()
}

// --- Market episode source ---------------------------------------------

/// Stream of auction rounds derived from scenario valuations.
///
/// Each round scales every common value by one shared log-normal draw
/// (keeping bidder values positively correlated) and jitters each match
/// component independently. Ground bids are truthful; the satellite posts a
/// static contract price fitted on warmup samples of the top ground value.
#[derive(Debug, Clone)]
pub struct MarketEpisodeSource {
    ground_values: Vec<Valuation>,
    satellite_base: f64,
    contract: f64,
    jitter: LogNormal<f64>,
    rng: ChaCha8Rng,
    scale: f64,
}

impl MarketEpisodeSource {
    /// Build from per-operator valuations. The satellite's base value is a
    /// configured fraction of the best ground valuation (the cloud behind
    /// it serves with the best available context), and its contract price
    /// maximizes expected profit against warmup top-value samples.
    pub fn new(cfg: &ScenarioConfig, valuations: &BTreeMap<OperatorId, Valuation>, seed: u64) -> Result<MarketEpisodeSource, SimError> {
        let ground_values: Vec<Valuation> = cfg
            .ground_operators()
            .map(|op| valuations.get(&op.id).copied().unwrap_or_default())
            .collect();
        if ground_values.is_empty() {
            return Err(SimError::NoGroundOperators);
        }
        let best_ground = ground_values
            .iter()
            .map(Valuation::value)
            .fold(0.0f64, f64::max);
        let satellite_base = cfg.market.satellite_value_factor * best_ground;
        let sigma = cfg.market.jitter_sigma;
        let jitter = LogNormal::new(0.0, sigma).expect("nonnegative sigma");

        // Warmup pass: sample top ground values to fit the contract price
        // and a reward normalizer.
        let mut warm_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77a3_9b1e);
        let mut top_samples = Vec::with_capacity(cfg.market.warmup_rounds as usize);
        for _ in 0..cfg.market.warmup_rounds {
            let shared: f64 = jitter.sample(&mut warm_rng);
            let top = ground_values
                .iter()
                .map(|v| v.common * shared * v.match_gain * jitter.sample(&mut warm_rng))
                .fold(0.0f64, f64::max);
            top_samples.push(top);
        }
        let contract = market::contract_price(satellite_base, &top_samples)?;
        let scale =
            (top_samples.iter().sum::<f64>() / top_samples.len() as f64).max(f64::MIN_POSITIVE);

        Ok(MarketEpisodeSource {
            ground_values,
            satellite_base,
            contract,
            jitter,
            rng: ChaCha8Rng::seed_from_u64(seed),
            scale,
        })
    }

    pub fn contract(&self) -> f64 {
        self.contract
    }

    pub fn bidder_count(&self) -> usize {
        self.ground_values.len() + 1
    }

    /// Per-round (common, match) pairs for every operator, satellite first,
    /// for order-statistic reporting.
    pub fn round_factors(round: &MarketRound) -> (f64, f64) {
        (round.satellite_value, round.ground_values.iter().copied().fold(0.0, f64::max))
    }
}

impl MarketEnv for MarketEpisodeSource {
    fn next_round(&mut self) -> MarketRound {
        let shared: f64 = self.jitter.sample(&mut self.rng);
        let satellite_value = self.satellite_base * shared * self.jitter.sample(&mut self.rng);
        let ground_values: Vec<f64> = self
            .ground_values
            .iter()
            .map(|v| v.common * shared * v.match_gain * self.jitter.sample(&mut self.rng))
            .collect();
        MarketRound {
            bids: BidProfile::new(self.contract, ground_values.clone()),
            satellite_value,
            ground_values,
        }
    }

    fn reward_scale(&self) -> f64 {
        self.scale
    }
}

// --- CSV rendering -------------------------------------------------------

/// Per-slot cost table: one row per (slot, operator).
pub fn costs_to_csv(result: &ScenarioResult) -> String {
    let mut out =
        String::from("slot,operator,policy,switching,transmission,compute,accuracy,cloud,total\n");
    for trace in &result.traces {
        for (op, c) in &trace.costs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                trace.slot,
                op,
                result.policy,
                c.switching,
                c.transmission,
                c.compute,
                c.accuracy,
                c.cloud,
                c.total()
            ));
        }
    }
    out
}

/// Cache event log: one row per admit/evict/reject.
pub fn events_to_csv(result: &ScenarioResult) -> String {
    let mut out = String::from("slot,operator,policy,event,service,model,kappa,tokens\n");
    for trace in &result.traces {
        for (op, events) in &trace.events {
            for e in events {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    trace.slot, op, result.policy, e.kind, e.service, e.model, e.kappa, e.tokens
                ));
            }
        }
    }
    out
}

/// Sweep table in tidy form: one row per (axis value, policy).
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "axis,value,policy,seed,mean_total,switching,transmission,compute,accuracy,cloud,\
         mean_accuracy_cost,mean_performance_gain\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.axis,
            r.value,
            r.policy,
            r.seed,
            r.mean_total,
            r.components.switching,
            r.components.transmission,
            r.components.compute,
            r.components.accuracy,
            r.components.cloud,
            r.mean_accuracy_cost,
            r.mean_performance_gain
        ));
    }
    out
}

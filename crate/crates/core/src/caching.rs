//! Per-operator cache state machine and replacement policies.
//!
//! A slot proceeds in two stages: a policy step turns the request row into a
//! [`CacheDecision`] (which pairs stay loaded, which requests run at the
//! edge), then [`apply_decision`] advances the context bookkeeping. The three
//! policies share one admission skeleton and differ only in how they pick
//! eviction victims: least accumulated-thought score, insertion order, or
//! hit frequency.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::cot::{self, ContextState};
use crate::domain::{ModelId, Operator, ScenarioConfig, ServiceId};

pub type PairKey = (ServiceId, ModelId);

/// Slack for floating-point capacity comparisons (sizes are exact small
/// sums, but decisions may be replayed through serialized costs).
const CAP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CachePolicy {
    LeastAot,
    Fifo,
    Lfu,
}

impl CachePolicy {
    pub const ALL: [CachePolicy; 3] = [CachePolicy::LeastAot, CachePolicy::Fifo, CachePolicy::Lfu];
}

impl fmt::Display for CachePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CachePolicy::LeastAot => write!(f, "least_aot"),
            CachePolicy::Fifo => write!(f, "fifo"),
            CachePolicy::Lfu => write!(f, "lfu"),
        }
    }
}

impl std::str::FromStr for CachePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "least_aot" => Ok(CachePolicy::LeastAot),
            "fifo" => Ok(CachePolicy::Fifo),
            "lfu" => Ok(CachePolicy::Lfu),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

/// One slot's caching and execution-placement decision.
///
/// `edge_exec` is the share of a pair's requests run at the edge; it can be
/// positive only for cached pairs. The cloud share entering the cost terms is
/// its complement, so requests for uncached pairs are wholly cloud-served.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CacheDecision {
    cached: BTreeSet<PairKey>,
    edge_exec: BTreeMap<PairKey, f64>,
    /// Requested models that cannot fit even an empty cache.
    uncacheable: BTreeSet<PairKey>,
}

impl CacheDecision {
    /// The all-zero decision used for the relaying satellite.
    pub fn satellite() -> CacheDecision {
        CacheDecision::default()
    }

    pub fn is_cached(&self, key: PairKey) -> bool {
        self.cached.contains(&key)
    }

    pub fn cached_pairs(&self) -> impl Iterator<Item = PairKey> + '_ {
        self.cached.iter().copied()
    }

    /// Share of this pair's requests executed locally.
    pub fn edge_share(&self, key: PairKey) -> f64 {
        self.edge_exec.get(&key).copied().unwrap_or(0.0)
    }

    /// Share of this pair's requests billed to the cloud.
    pub fn cloud_share(&self, key: PairKey) -> f64 {
        1.0 - self.edge_share(key)
    }

    pub fn is_uncacheable(&self, key: PairKey) -> bool {
        self.uncacheable.contains(&key)
    }

    pub fn insert_cached(&mut self, key: PairKey, edge_share: f64) {
        self.cached.insert(key);
        if edge_share > 0.0 {
            self.edge_exec.insert(key, edge_share);
        }
    }

    fn evict(&mut self, key: PairKey) {
        self.cached.remove(&key);
        self.edge_exec.remove(&key);
    }
}

/// Persistent cache bookkeeping of one ground BS.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OperatorCacheState {
    contexts: BTreeMap<PairKey, ContextState>,
    cached: BTreeSet<PairKey>,
    used_memory_gb: f64,
    /// Admission order, oldest first.
    insertion_order: Vec<PairKey>,
    /// Requests served per pair since admission.
    hit_counts: BTreeMap<PairKey, u64>,
}

impl OperatorCacheState {
    pub fn new() -> OperatorCacheState {
        OperatorCacheState::default()
    }

    pub fn context(&self, key: PairKey) -> ContextState {
        self.contexts.get(&key).copied().unwrap_or(ContextState::ZERO)
    }

    pub fn is_cached(&self, key: PairKey) -> bool {
        self.cached.contains(&key)
    }

    pub fn cached_pairs(&self) -> impl Iterator<Item = PairKey> + '_ {
        self.cached.iter().copied()
    }

    pub fn used_memory_gb(&self) -> f64 {
        self.used_memory_gb
    }

    pub fn hit_count(&self, key: PairKey) -> u64 {
        self.hit_counts.get(&key).copied().unwrap_or(0)
    }

    pub fn insertion_rank(&self, key: PairKey) -> usize {
        self.insertion_order
            .iter()
            .position(|&k| k == key)
            .unwrap_or(usize::MAX)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintViolation {
    Memory { used_gb: f64, capacity_gb: f64 },
    EdgeWithoutCache { pair: PairKey },
    Energy { used_gflop: f64, budget_gflop: f64 },
    Window { pair: PairKey, tokens: f64, window: u64 },
}

impl fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintViolation::Memory { used_gb, capacity_gb } => {
                write!(f, "cached models need {used_gb} GB, capacity {capacity_gb} GB")
            }
            ConstraintViolation::EdgeWithoutCache { pair } => {
                write!(f, "edge execution of uncached pair {pair:?}")
            }
            ConstraintViolation::Energy { used_gflop, budget_gflop } => {
                write!(f, "edge batch needs {used_gflop} GFLOP, budget {budget_gflop} GFLOP")
            }
            ConstraintViolation::Window { pair, tokens, window } => {
                write!(f, "pair {pair:?} would carry {tokens} tokens over window {window}")
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CachingError {
    #[error("decision violates {0} constraint(s); state unchanged")]
    Infeasible(usize),
}

/// Evaluate every resource constraint a decision must satisfy; returns all
/// violations rather than the first.
pub fn check_feasible(
    decision: &CacheDecision,
    state: &OperatorCacheState,
    requests: &BTreeMap<PairKey, u64>,
    operator: &Operator,
    cfg: &ScenarioConfig,
) -> Vec<ConstraintViolation> {
    let mut violations = Vec::new();

    let used_gb: f64 = decision
        .cached_pairs()
        .map(|(_, m)| cfg.model(m).map_or(0.0, |model| model.size_gb))
        .sum();
    if used_gb > operator.gpu_memory_gb + CAP_EPS {
        violations.push(ConstraintViolation::Memory {
            used_gb,
            capacity_gb: operator.gpu_memory_gb,
        });
    }

    let mut energy = 0.0;
    for (&pair, &r) in requests {
        if r == 0 {
            continue;
        }
        let share = decision.edge_share(pair);
        if share > 0.0 && !decision.is_cached(pair) {
            violations.push(ConstraintViolation::EdgeWithoutCache { pair });
        }
        if let Some(model) = cfg.model(pair.1) {
            energy += model.energy_per_token * share * r as f64;
        }
    }
    if energy > operator.gpu_energy_budget + CAP_EPS {
        violations.push(ConstraintViolation::Energy {
            used_gflop: energy,
            budget_gflop: operator.gpu_energy_budget,
        });
    }

    for pair in decision.cached_pairs() {
        let (Some(model), Some(service)) = (cfg.model(pair.1), cfg.service(pair.0)) else {
            continue;
        };
        let r = requests.get(&pair).copied().unwrap_or(0);
        let delta = cot::delta_tokens(
            true,
            decision.cloud_share(pair),
            r,
            service.cot_example_tokens,
        );
        let projected = state.context(pair).tokens + delta;
        if projected > model.context_window as f64 {
            violations.push(ConstraintViolation::Window {
                pair,
                tokens: projected,
                window: model.context_window,
            });
        }
    }

    violations
}

/// Eviction preference shared by the policy steps: smaller sorts first.
fn victim_order(
    policy: CachePolicy,
    state: &OperatorCacheState,
    key: PairKey,
) -> (u64, u64, usize, PairKey) {
    match policy {
        // Minimum kappa, ties by lowest pair key. Bit-exact total order via
        // the raw representation of the nonnegative score.
        CachePolicy::LeastAot => (state.context(key).aot.to_bits(), 0, 0, key),
        CachePolicy::Fifo => (0, 0, state.insertion_rank(key), key),
        CachePolicy::Lfu => (0, state.hit_count(key), state.insertion_rank(key), key),
    }
}

fn policy_step(
    policy: CachePolicy,
    state: &OperatorCacheState,
    requests: &BTreeMap<PairKey, u64>,
    operator: &Operator,
    cfg: &ScenarioConfig,
) -> CacheDecision {
    let mut decision = CacheDecision::default();
    let size_of = |pair: PairKey| cfg.model(pair.1).map_or(f64::INFINITY, |m| m.size_gb);

    // Occupancy carried over from the previous slot; entries leave it only
    // when evicted. Retained pairs are never eviction candidates.
    let mut in_memory: BTreeSet<PairKey> = state.cached.clone();
    let mut free = operator.gpu_memory_gb - state.used_memory_gb;
    let mut retained: BTreeSet<PairKey> = BTreeSet::new();

    // Keep already-cached requested pairs.
    for (&pair, &r) in requests {
        if r > 0 && state.is_cached(pair) {
            decision.insert_cached(pair, 0.0);
            retained.insert(pair);
        }
    }

    // Admit the rest, evicting by policy preference when short on memory.
    for (&pair, &r) in requests {
        if r == 0 || decision.is_cached(pair) {
            continue;
        }
        let size = size_of(pair);
        if size > operator.gpu_memory_gb + CAP_EPS {
            decision.uncacheable.insert(pair);
            continue;
        }
        while size > free + CAP_EPS {
            let victim = in_memory
                .iter()
                .copied()
                .filter(|k| !retained.contains(k))
                .min_by_key(|&k| victim_order(policy, state, k));
            match victim {
                Some(v) => {
                    in_memory.remove(&v);
                    free += size_of(v);
                }
                None => break,
            }
        }
        if size <= free + CAP_EPS {
            decision.insert_cached(pair, 0.0);
            retained.insert(pair);
            in_memory.insert(pair);
            free -= size;
        }
    }

    // Unrequested survivors stay loaded.
    for pair in in_memory {
        if !decision.is_cached(pair) {
            decision.insert_cached(pair, 0.0);
        }
    }

    // Edge execution while the per-slot compute budget admits each batch.
    let mut energy = 0.0;
    for (&pair, &r) in requests {
        if r == 0 || !decision.is_cached(pair) {
            continue;
        }
        let need = cfg
            .model(pair.1)
            .map_or(f64::INFINITY, |m| m.energy_per_token * r as f64);
        if energy + need <= operator.gpu_energy_budget + CAP_EPS {
            energy += need;
            decision.insert_cached(pair, 1.0);
        }
    }

    // Context-window overflow forces eviction; the slot's requests go to the
    // cloud for those pairs.
    let mut overflow = Vec::new();
    for pair in decision.cached_pairs() {
        let (Some(model), Some(service)) = (cfg.model(pair.1), cfg.service(pair.0)) else {
            continue;
        };
        let r = requests.get(&pair).copied().unwrap_or(0);
        let delta = cot::delta_tokens(
            true,
            decision.cloud_share(pair),
            r,
            service.cot_example_tokens,
        );
        if state.context(pair).tokens + delta > model.context_window as f64 {
            overflow.push(pair);
        }
    }
    for pair in overflow {
        decision.evict(pair);
    }

    decision
}

/// Replacement by least age-of-thought: eviction removes the cached pair
/// with the smallest kappa among those not retained this slot.
pub fn least_aot_step(
    state: &OperatorCacheState,
    requests: &BTreeMap<PairKey, u64>,
    operator: &Operator,
    cfg: &ScenarioConfig,
) -> CacheDecision {
    policy_step(CachePolicy::LeastAot, state, requests, operator, cfg)
}

/// First-in-first-out baseline: eviction order equals admission order.
pub fn fifo_step(
    state: &OperatorCacheState,
    requests: &BTreeMap<PairKey, u64>,
    operator: &Operator,
    cfg: &ScenarioConfig,
) -> CacheDecision {
    policy_step(CachePolicy::Fifo, state, requests, operator, cfg)
}

/// Least-frequently-used baseline: ascending hit count, ties by admission
/// order.
pub fn lfu_step(
    state: &OperatorCacheState,
    requests: &BTreeMap<PairKey, u64>,
    operator: &Operator,
    cfg: &ScenarioConfig,
) -> CacheDecision {
    policy_step(CachePolicy::Lfu, state, requests, operator, cfg)
}

pub fn step(
    policy: CachePolicy,
    state: &OperatorCacheState,
    requests: &BTreeMap<PairKey, u64>,
    operator: &Operator,
    cfg: &ScenarioConfig,
) -> CacheDecision {
    policy_step(policy, state, requests, operator, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheEventKind {
    Admit,
    Evict,
    Reject,
}

impl fmt::Display for CacheEventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CacheEventKind::Admit => write!(f, "admit"),
            CacheEventKind::Evict => write!(f, "evict"),
            CacheEventKind::Reject => write!(f, "reject"),
        }
    }
}

/// Cache log entry; kappa and tokens are taken at the event instant
/// (post-update for admissions, pre-eviction values for evictions).
#[derive(Debug, Clone, PartialEq)]
pub struct CacheEvent {
    pub kind: CacheEventKind,
    pub service: ServiceId,
    pub model: ModelId,
    pub kappa: f64,
    pub tokens: f64,
}

/// Advance the state by one feasible decision: contexts via the token/AoT
/// recursions, then the memory ledger, admission order, and hit counts.
///
/// An infeasible decision is rejected and the state is left untouched.
pub fn apply_decision(
    state: &mut OperatorCacheState,
    decision: &CacheDecision,
    requests: &BTreeMap<PairKey, u64>,
    operator: &Operator,
    cfg: &ScenarioConfig,
) -> Result<Vec<CacheEvent>, CachingError> {
    let violations = check_feasible(decision, state, requests, operator, cfg);
    if !violations.is_empty() {
        return Err(CachingError::Infeasible(violations.len()));
    }

    let mut events = Vec::new();

    // Evictions first, reported with their final context values.
    let evicted: Vec<PairKey> = state
        .cached
        .iter()
        .copied()
        .filter(|&k| !decision.is_cached(k))
        .collect();
    for pair in &evicted {
        let ctx = state.context(*pair);
        events.push(CacheEvent {
            kind: CacheEventKind::Evict,
            service: pair.0,
            model: pair.1,
            kappa: ctx.aot,
            tokens: ctx.tokens,
        });
    }

    let admitted: Vec<PairKey> = decision
        .cached_pairs()
        .filter(|&k| !state.is_cached(k))
        .collect();

    // Requested pairs that end the slot uncached were turned away.
    for (&pair, &r) in requests {
        if r > 0 && !decision.is_cached(pair) {
            events.push(CacheEvent {
                kind: CacheEventKind::Reject,
                service: pair.0,
                model: pair.1,
                kappa: 0.0,
                tokens: 0.0,
            });
        }
    }

    // Context recursions over every pair touched by the old state, the new
    // decision, or this slot's requests.
    let mut touched: BTreeSet<PairKey> = state.cached.iter().copied().collect();
    touched.extend(decision.cached_pairs());
    touched.extend(requests.keys().copied());
    let mut next_contexts = BTreeMap::new();
    for pair in touched {
        let cached = decision.is_cached(pair);
        let service = cfg.service(pair.0);
        let r = requests.get(&pair).copied().unwrap_or(0);
        let delta = match service {
            Some(s) => cot::delta_tokens(cached, decision.cloud_share(pair), r, s.cot_example_tokens),
            None => 0.0,
        };
        let prev = state.context(pair);
        let tokens = cot::update_tokens(&prev, cached, delta);
        let aot = cot::update_aot(&prev, cached, delta, cfg.aot_vanish, cfg.decay_mode)
            .expect("validated config vanish");
        if cached {
            next_contexts.insert(pair, ContextState { tokens, aot });
        }
    }

    for pair in &admitted {
        let ctx = next_contexts.get(pair).copied().unwrap_or(ContextState::ZERO);
        events.push(CacheEvent {
            kind: CacheEventKind::Admit,
            service: pair.0,
            model: pair.1,
            kappa: ctx.aot,
            tokens: ctx.tokens,
        });
    }

    // Commit ledgers.
    state.contexts = next_contexts;
    state.cached = decision.cached_pairs().collect();
    state.insertion_order.retain(|k| state.cached.contains(k));
    for pair in &admitted {
        state.insertion_order.push(*pair);
    }
    for pair in &evicted {
        state.hit_counts.remove(pair);
    }
    for (&pair, &r) in requests {
        if r > 0 && state.cached.contains(&pair) {
            *state.hit_counts.entry(pair).or_insert(0) += r;
        }
    }
    state.used_memory_gb = state
        .cached
        .iter()
        .map(|&(_, m)| cfg.model(m).map_or(0.0, |model| model.size_gb))
        .sum();

    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ScenarioConfig, ScenarioShape};

    /// Scenario with two models (130 GB / 348 GB) and three services, one
    /// ground BS whose capacity admits limited pairs.
    fn tiny_cfg(memory_gb: f64, energy: f64) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::from_shape(ScenarioShape {
            ground_bs: 1,
            services: 3,
            models: 2,
            gpus_per_bs: 1,
            users_per_operator: 2,
            horizon_slots: 4,
            seed: 9,
        });
        cfg.operators[1].gpu_memory_gb = memory_gb;
        cfg.operators[1].gpu_energy_budget = energy;
        cfg
    }

    fn req(entries: &[(PairKey, u64)]) -> BTreeMap<PairKey, u64> {
        entries.iter().copied().collect()
    }

    #[test]
    fn empty_decision_has_no_violations() {
        let cfg = tiny_cfg(500.0, 1e9);
        let op = cfg.operator(1).unwrap();
        let state = OperatorCacheState::new();
        let violations =
            check_feasible(&CacheDecision::default(), &state, &req(&[]), op, &cfg);
        assert!(violations.is_empty());
    }

    #[test]
    fn two_heavyweights_overflow_160_gb() {
        // Two 130 GB models into a 160 GB budget (2x80 GB GPUs).
        let mut cfg = tiny_cfg(160.0, 1e9);
        cfg.models[1].size_gb = 130.0;
        let op = cfg.operator(1).unwrap();
        let state = OperatorCacheState::new();
        let mut decision = CacheDecision::default();
        decision.insert_cached((0, 0), 0.0);
        decision.insert_cached((1, 1), 0.0);
        let violations = check_feasible(&decision, &state, &req(&[]), op, &cfg);
        assert!(matches!(violations[0], ConstraintViolation::Memory { .. }));
    }

    #[test]
    fn edge_execution_requires_cached_model() {
        let cfg = tiny_cfg(500.0, 1e9);
        let op = cfg.operator(1).unwrap();
        let state = OperatorCacheState::new();
        let mut decision = CacheDecision::default();
        decision.edge_exec.insert((0, 0), 1.0);
        let violations = check_feasible(&decision, &state, &req(&[((0, 0), 3)]), op, &cfg);
        assert!(violations
            .iter()
            .any(|v| matches!(v, ConstraintViolation::EdgeWithoutCache { .. })));
    }

    #[test]
    fn admits_and_serves_when_uncontended() {
        let cfg = tiny_cfg(500.0, 1e9);
        let op = cfg.operator(1).unwrap();
        let state = OperatorCacheState::new();
        let requests = req(&[((0, 0), 2)]);
        let decision = least_aot_step(&state, &requests, op, &cfg);
        assert!(decision.is_cached((0, 0)));
        assert_eq!(decision.edge_share((0, 0)), 1.0);
        assert!(check_feasible(&decision, &state, &requests, op, &cfg).is_empty());
    }

    #[test]
    fn least_aot_evicts_minimum_kappa() {
        // Cache holds three 130 GB pairs with kappa 5, 2, 9 in 390 GB; a new
        // 130 GB pair forces one eviction.
        let mut cfg = tiny_cfg(390.0, 1e9);
        cfg.models[1].size_gb = 130.0;
        cfg.services.push(crate::domain::Service {
            id: 3,
            affinity_model: 0,
            ..cfg.services[0].clone()
        });
        let op = cfg.operator(1).unwrap().clone();
        let mut state = OperatorCacheState::new();
        for (pair, kappa) in [((0u32, 0u32), 5.0), ((1, 0), 2.0), ((2, 0), 9.0)] {
            state.cached.insert(pair);
            state.contexts.insert(pair, ContextState { tokens: 10.0, aot: kappa });
            state.insertion_order.push(pair);
        }
        state.used_memory_gb = 390.0;
        let requests = req(&[((3, 0), 1)]);
        let decision = least_aot_step(&state, &requests, &op, &cfg);
        assert!(decision.is_cached((3, 0)));
        assert!(!decision.is_cached((1, 0)), "kappa=2 entry must go");
        assert!(decision.is_cached((0, 0)));
        assert!(decision.is_cached((2, 0)));

        // Brute-force oracle: of all single evictions that fit the new pair,
        // the chosen victim has minimal kappa.
        let victims = [(0, 0), (1, 0), (2, 0)];
        let best = victims
            .iter()
            .min_by(|a, b| {
                state
                    .context(**a)
                    .aot
                    .partial_cmp(&state.context(**b).aot)
                    .unwrap()
            })
            .unwrap();
        assert!(!decision.is_cached(*best));
    }

    #[test]
    fn fifo_evicts_in_insertion_order() {
        let mut cfg = tiny_cfg(390.0, 1e9);
        cfg.models[1].size_gb = 130.0;
        cfg.services.push(crate::domain::Service {
            id: 3,
            affinity_model: 0,
            ..cfg.services[0].clone()
        });
        let op = cfg.operator(1).unwrap().clone();
        let mut state = OperatorCacheState::new();
        // Insertion order y, x, z with pair keys chosen so key order differs.
        for pair in [(1u32, 0u32), (0, 0), (2, 0)] {
            state.cached.insert(pair);
            state.contexts.insert(pair, ContextState { tokens: 0.0, aot: 1.0 });
            state.insertion_order.push(pair);
        }
        state.used_memory_gb = 390.0;
        let decision = fifo_step(&state, &req(&[((3, 0), 1)]), &op, &cfg);
        assert!(!decision.is_cached((1, 0)), "oldest admission goes first");
        assert!(decision.is_cached((0, 0)));
    }

    #[test]
    fn fifo_drains_queue_left_to_right() {
        // Repeated contention: a queue oracle replays admissions/evictions.
        let mut cfg = tiny_cfg(130.0, 1e9);
        cfg.models[1].size_gb = 130.0;
        for id in 3..6 {
            cfg.services.push(crate::domain::Service {
                id,
                affinity_model: 0,
                ..cfg.services[0].clone()
            });
        }
        let op = cfg.operator(1).unwrap().clone();
        let mut state = OperatorCacheState::new();
        let mut queue: Vec<PairKey> = Vec::new();
        for slot in 0..5u32 {
            let pair = (slot % 6, 0u32);
            let requests = req(&[(pair, 1)]);
            let decision = fifo_step(&state, &requests, &op, &cfg);
            apply_decision(&mut state, &decision, &requests, &op, &cfg).unwrap();
            // Queue oracle: capacity one entry.
            if !queue.contains(&pair) {
                if !queue.is_empty() {
                    queue.remove(0);
                }
                queue.push(pair);
            }
            let cached: Vec<PairKey> = state.cached_pairs().collect();
            assert_eq!(cached, queue, "slot {slot}");
        }
    }

    #[test]
    fn lfu_evicts_low_hit_count_then_oldest() {
        let mut cfg = tiny_cfg(390.0, 1e9);
        cfg.models[1].size_gb = 130.0;
        cfg.services.push(crate::domain::Service {
            id: 3,
            affinity_model: 0,
            ..cfg.services[0].clone()
        });
        let op = cfg.operator(1).unwrap().clone();
        let mut state = OperatorCacheState::new();
        for (pair, hits) in [((0u32, 0u32), 7u64), ((1, 0), 1), ((2, 0), 3)] {
            state.cached.insert(pair);
            state.contexts.insert(pair, ContextState { tokens: 0.0, aot: 1.0 });
            state.insertion_order.push(pair);
            state.hit_counts.insert(pair, hits);
        }
        state.used_memory_gb = 390.0;
        let decision = lfu_step(&state, &req(&[((3, 0), 1)]), &op, &cfg);
        assert!(!decision.is_cached((1, 0)), "count-1 entry goes");

        // All-equal counts fall back to insertion order.
        let mut state2 = OperatorCacheState::new();
        for pair in [(2u32, 0u32), (0, 0), (1, 0)] {
            state2.cached.insert(pair);
            state2.contexts.insert(pair, ContextState { tokens: 0.0, aot: 1.0 });
            state2.insertion_order.push(pair);
            state2.hit_counts.insert(pair, 4);
        }
        state2.used_memory_gb = 390.0;
        let decision2 = lfu_step(&state2, &req(&[((3, 0), 1)]), &op, &cfg);
        assert!(!decision2.is_cached((2, 0)), "oldest among ties goes");
    }

    #[test]
    fn lfu_matches_counting_oracle_over_trace() {
        let mut cfg = tiny_cfg(260.0, 1e9);
        cfg.models[1].size_gb = 130.0;
        for id in 3..5 {
            cfg.services.push(crate::domain::Service {
                id,
                affinity_model: 0,
                ..cfg.services[0].clone()
            });
        }
        let op = cfg.operator(1).unwrap().clone();
        let mut state = OperatorCacheState::new();
        // Independent frequency table replay.
        let mut freq: BTreeMap<PairKey, u64> = BTreeMap::new();
        let trace: [(u32, u64); 10] =
            [(0, 3), (1, 1), (0, 2), (2, 1), (0, 1), (3, 1), (1, 2), (4, 1), (0, 1), (2, 2)];
        for (service, r) in trace {
            let pair = (service, 0u32);
            let requests = req(&[(pair, r)]);
            let decision = lfu_step(&state, &requests, &op, &cfg);
            apply_decision(&mut state, &decision, &requests, &op, &cfg).unwrap();
            // Oracle bookkeeping mirrors the declared LFU contract.
            if state.is_cached(pair) {
                *freq.entry(pair).or_insert(0) += r;
            }
            freq.retain(|k, _| state.is_cached(*k));
            for (&k, &count) in &freq {
                assert_eq!(state.hit_count(k), count);
            }
        }
    }

    #[test]
    fn no_contention_policies_agree() {
        let cfg = tiny_cfg(5000.0, 1e9);
        let op = cfg.operator(1).unwrap();
        let mut states = [
            OperatorCacheState::new(),
            OperatorCacheState::new(),
            OperatorCacheState::new(),
        ];
        for slot in 0..4u64 {
            let requests = req(&[(((slot % 3) as u32, (slot % 2) as u32), 2)]);
            let d0 = least_aot_step(&states[0], &requests, op, &cfg);
            let d1 = fifo_step(&states[1], &requests, op, &cfg);
            let d2 = lfu_step(&states[2], &requests, op, &cfg);
            assert_eq!(d0, d1);
            assert_eq!(d1, d2);
            for (state, d) in states.iter_mut().zip([&d0, &d1, &d2]) {
                apply_decision(state, d, &requests, op, &cfg).unwrap();
            }
        }
    }

    #[test]
    fn window_overflow_forces_eviction() {
        let mut cfg = tiny_cfg(500.0, 1e9);
        cfg.models[0].context_window = 300;
        let op = cfg.operator(1).unwrap().clone();
        let mut state = OperatorCacheState::new();
        let k = cfg.services[0].cot_example_tokens as f64;
        state.cached.insert((0, 0));
        state
            .contexts
            .insert((0, 0), ContextState { tokens: 300.0 - k + 1.0, aot: 5.0 });
        state.insertion_order.push((0, 0));
        state.used_memory_gb = 130.0;
        let requests = req(&[((0, 0), 1)]);
        let decision = least_aot_step(&state, &requests, &op, &cfg);
        assert!(!decision.is_cached((0, 0)), "overflowing pair is evicted");
        assert_eq!(decision.edge_share((0, 0)), 0.0);
        // After applying, nothing cached carries K over the window.
        apply_decision(&mut state, &decision, &requests, &op, &cfg).unwrap();
        assert_eq!(state.context((0, 0)), ContextState::ZERO);
    }

    #[test]
    fn oversized_model_marked_uncacheable() {
        let mut cfg = tiny_cfg(100.0, 1e9);
        let op = cfg.operator(1).unwrap().clone();
        cfg.models[0].size_gb = 130.0;
        let state = OperatorCacheState::new();
        let decision = least_aot_step(&state, &req(&[((0, 0), 1)]), &op, &cfg);
        assert!(decision.is_uncacheable((0, 0)));
        assert!(!decision.is_cached((0, 0)));
        assert_eq!(decision.cloud_share((0, 0)), 1.0);
    }

    #[test]
    fn energy_exhaustion_sends_batches_to_cloud() {
        // Budget admits the first batch only.
        let mut cfg = tiny_cfg(900.0, 0.0);
        let e = cfg.models[0].energy_per_token;
        cfg.operators[1].gpu_energy_budget = e * 2.0;
        let op = cfg.operator(1).unwrap().clone();
        let state = OperatorCacheState::new();
        let requests = req(&[((0, 0), 2), ((1, 1), 2)]);
        let decision = least_aot_step(&state, &requests, &op, &cfg);
        assert_eq!(decision.edge_share((0, 0)), 1.0);
        assert_eq!(decision.edge_share((1, 1)), 0.0, "second batch offloaded");
        assert!(decision.is_cached((1, 1)), "still cached, just not executed");
    }

    #[test]
    fn apply_rejects_infeasible_and_leaves_state() {
        let cfg = tiny_cfg(100.0, 1e9);
        let op = cfg.operator(1).unwrap().clone();
        let mut state = OperatorCacheState::new();
        let mut decision = CacheDecision::default();
        decision.insert_cached((0, 0), 0.0); // 130 GB into 100 GB
        let before = state.clone();
        let err = apply_decision(&mut state, &decision, &req(&[]), &op, &cfg);
        assert_eq!(err, Err(CachingError::Infeasible(1)));
        assert_eq!(state, before);
    }

    #[test]
    fn all_zero_decision_resets_contexts() {
        let cfg = tiny_cfg(500.0, 1e9);
        let op = cfg.operator(1).unwrap().clone();
        let mut state = OperatorCacheState::new();
        state.cached.insert((0, 0));
        state.contexts.insert((0, 0), ContextState { tokens: 50.0, aot: 9.0 });
        state.insertion_order.push((0, 0));
        state.used_memory_gb = 130.0;
        let events =
            apply_decision(&mut state, &CacheDecision::default(), &req(&[]), &op, &cfg).unwrap();
        assert_eq!(state.context((0, 0)), ContextState::ZERO);
        assert_eq!(state.used_memory_gb(), 0.0);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, CacheEventKind::Evict);
        assert_eq!(events[0].kappa, 9.0);
    }

    #[test]
    fn cached_executed_pair_gains_exactly_delta() {
        let cfg = tiny_cfg(500.0, 1e9);
        let op = cfg.operator(1).unwrap().clone();
        let mut state = OperatorCacheState::new();
        let requests = req(&[((0, 0), 2)]);
        let decision = least_aot_step(&state, &requests, &op, &cfg);
        apply_decision(&mut state, &decision, &requests, &op, &cfg).unwrap();
        let k = cfg.services[0].cot_example_tokens as f64;
        assert_eq!(state.context((0, 0)).tokens, 2.0 * k);
    }

    #[test]
    fn three_slot_trace_matches_hand_recursion() {
        let cfg = tiny_cfg(500.0, 1e9);
        let op = cfg.operator(1).unwrap().clone();
        let mut state = OperatorCacheState::new();
        let k = cfg.services[0].cot_example_tokens as f64;
        let vanish = cfg.aot_vanish;
        // Slot-by-slot recursion oracle for pair (0,0): requests 2, 1, 3,
        // always cached and edge-executed.
        let mut expect_tokens = 0.0f64;
        let mut expect_aot = 0.0f64;
        for r in [2u64, 1, 3] {
            let requests = req(&[((0, 0), r)]);
            let decision = least_aot_step(&state, &requests, &op, &cfg);
            apply_decision(&mut state, &decision, &requests, &op, &cfg).unwrap();
            let delta = r as f64 * k;
            expect_tokens += delta;
            expect_aot = ((1.0 - vanish) * expect_aot + delta).max(0.0);
        }
        assert_eq!(state.context((0, 0)).tokens, expect_tokens);
        assert!((state.context((0, 0)).aot - expect_aot).abs() < 1e-9);
    }

    #[test]
    fn admitted_entries_update_hits_and_order() {
        let cfg = tiny_cfg(500.0, 1e9);
        let op = cfg.operator(1).unwrap().clone();
        let mut state = OperatorCacheState::new();
        let requests = req(&[((0, 0), 4), ((1, 1), 2)]);
        let decision = least_aot_step(&state, &requests, &op, &cfg);
        let events = apply_decision(&mut state, &decision, &requests, &op, &cfg).unwrap();
        assert_eq!(
            events.iter().filter(|e| e.kind == CacheEventKind::Admit).count(),
            2
        );
        assert_eq!(state.hit_count((0, 0)), 4);
        assert_eq!(state.insertion_rank((0, 0)), 0);
        assert_eq!(state.insertion_rank((1, 1)), 1);
    }
}

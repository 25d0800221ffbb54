//! Core entities and scenario configuration shared by every other module.
//!
//! All values here are immutable after construction; a `ScenarioConfig` can be
//! shared freely across concurrent runs. Configs load from a flat plain-text
//! key-value format with repeated `[model]` / `[service]` / `[operator]` /
//! `[user]` sections (see the README for the key list). Unknown keys are kept
//! on the config and reported by [`validate_config`].

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::link::SatelliteGeometry;

pub type OperatorId = u32;
pub type ServiceId = u32;
pub type ModelId = u32;

/// Largest admissible chain-of-thought example, in tokens.
pub const MAX_COT_EXAMPLE_TOKENS: u64 = 200;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("sigma {0} outside [0, 0.5)")]
    SigmaOutOfRange(f64),
}

/// Chain-of-thought gain ratio `beta = sigma / (1 - sigma)`.
///
/// Strictly increasing on `[0, 0.5)` and bounded below one.
pub fn derive_beta(sigma: f64) -> Result<f64, DomainError> {
    if !(0.0..0.5).contains(&sigma) {
        return Err(DomainError::SigmaOutOfRange(sigma));
    }
    Ok(sigma / (1.0 - sigma))
}

/// A cacheable language model.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmModel {
    pub id: ModelId,
    pub name: String,
    pub param_count: u64,
    /// Runtime GPU footprint (s_m), GB.
    pub size_gb: f64,
    /// Compute per generated token (e_m), GFLOP/token.
    pub energy_per_token: f64,
    /// Context window (w_m), tokens.
    pub context_window: u64,
    /// Ambiguity level sigma of the model's CoT examples, in [0, 0.5).
    pub cot_noise_sigma: f64,
}

impl LlmModel {
    /// CoT gain `beta = sigma / (1 - sigma)`, derived exactly from sigma.
    pub fn cot_gain_beta(&self) -> f64 {
        self.cot_noise_sigma / (1.0 - self.cot_noise_sigma)
    }
}

/// One agent service with its workload shape and per-model accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct Service {
    pub id: ServiceId,
    /// Input payload per request (d_i), MB.
    pub input_size_mb: f64,
    /// Tokens per CoT example (k_i).
    pub cot_example_tokens: u64,
    /// Zero-shot accuracy per model (alpha_{i,m}), in (0, 1].
    pub zero_shot_accuracy: BTreeMap<ModelId, f64>,
    /// Model this service requests by default.
    pub affinity_model: ModelId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Satellite,
    GroundBs,
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorKind::Satellite => write!(f, "satellite"),
            OperatorKind::GroundBs => write!(f, "ground_bs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct User {
    pub id: u32,
    pub transmit_power_w: f64,
    pub mean_channel_gain: f64,
    /// Poisson request intensity contributed per service and slot.
    pub request_rate: f64,
}

/// A network operator: the relaying satellite (id 0) or a ground BS.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    pub id: OperatorId,
    pub kind: OperatorKind,
    pub bandwidth_hz: f64,
    /// GPU memory capacity (G_n), GB. Zero for the satellite.
    pub gpu_memory_gb: f64,
    /// Edge compute budget per slot (E_n), GFLOP.
    pub gpu_energy_budget: f64,
    /// Edge compute rate (f_n), GFLOP/s.
    pub compute_rate: f64,
    /// Core/backhaul rate to the cloud (r^C_n), bit/s.
    pub core_rate: f64,
    pub edge_access_cost: f64,
    pub cloud_access_cost: f64,
    /// Model switching coefficient (lambda), cost-units per load.
    pub switch_coeff: f64,
    pub users: Vec<User>,
}

impl Operator {
    pub fn is_satellite(&self) -> bool {
        self.kind == OperatorKind::Satellite
    }

    /// Total request intensity per service contributed by this cohort.
    pub fn request_intensity(&self) -> f64 {
        self.users.iter().map(|u| u.request_rate).sum()
    }
}

/// Per-slot request counts, keyed by (operator, service, model).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RequestMatrix {
    pub slot: u64,
    pub entries: BTreeMap<(OperatorId, ServiceId, ModelId), u64>,
}

impl RequestMatrix {
    pub fn get(&self, op: OperatorId, service: ServiceId, model: ModelId) -> u64 {
        self.entries.get(&(op, service, model)).copied().unwrap_or(0)
    }

    /// Requests of one operator, keyed by (service, model).
    pub fn operator_row(&self, op: OperatorId) -> BTreeMap<(ServiceId, ModelId), u64> {
        self.entries
            .iter()
            .filter(|((o, _, _), _)| *o == op)
            .map(|((_, i, m), r)| ((*i, *m), *r))
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }
}

/// How the AoT vanishing factor is applied per slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayMode {
    /// Literal token-count subtraction: `max(kappa + delta - vanish, 0)`.
    Subtractive,
    /// Relative decay: `max((1 - vanish) * kappa + delta, 0)`.
    Proportional,
}

impl fmt::Display for DecayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecayMode::Subtractive => write!(f, "subtractive"),
            DecayMode::Proportional => write!(f, "proportional"),
        }
    }
}

/// Q-learning hyperparameters for the auction price-scaling policy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_sync_period: u64,
    pub action_count: usize,
    pub episodes: u64,
    pub iters_per_episode: u64,
    pub hidden_sizes: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.95,
            learning_rate: 1e-3,
            momentum: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 5_000,
            batch_size: 64,
            buffer_capacity: 10_000,
            target_sync_period: 100,
            action_count: 10,
            episodes: 200,
            iters_per_episode: 50,
            hidden_sizes: vec![64, 64],
        }
    }
}

/// Market-layer knobs: per-round jitter and the satellite side of the book.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSettings {
    /// Log-normal sigma of the per-round multiplicative jitter.
    pub jitter_sigma: f64,
    /// Satellite base value as a fraction of the best ground valuation.
    pub satellite_value_factor: f64,
    /// Rounds sampled to fit the satellite contract price and rho statistics.
    pub warmup_rounds: u64,
    pub eval_rounds: u64,
}

impl Default for MarketSettings {
    fn default() -> Self {
        MarketSettings {
            jitter_sigma: 0.1,
            satellite_value_factor: 0.9,
            warmup_rounds: 200,
            eval_rounds: 1000,
        }
    }
}

/// Full scenario description. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub operators: Vec<Operator>,
    pub services: Vec<Service>,
    pub models: Vec<LlmModel>,
    pub horizon_slots: u64,
    /// AWGN power (sigma^2), W.
    pub noise_power: f64,
    /// Per-slot vanishing factor applied to every (service, model) context.
    pub aot_vanish: f64,
    pub decay_mode: DecayMode,
    /// Cloud unit process cost per model, before the operator's access factor.
    pub cloud_unit_cost: BTreeMap<ModelId, f64>,
    pub rng_seed: u64,
    pub geometry: SatelliteGeometry,
    pub market: MarketSettings,
    pub rl: TrainConfig,
    /// Tiny-instance regression threshold for the exhaustive caching oracle.
    pub optimality_gap_threshold: f64,
    /// Keys the parser did not recognize; reported by `validate_config`.
    pub unknown_keys: Vec<String>,
}

impl ScenarioConfig {
    pub fn model(&self, id: ModelId) -> Option<&LlmModel> {
        self.models.iter().find(|m| m.id == id)
    }

    pub fn service(&self, id: ServiceId) -> Option<&Service> {
        self.services.iter().find(|s| s.id == id)
    }

    pub fn operator(&self, id: OperatorId) -> Option<&Operator> {
        self.operators.iter().find(|o| o.id == id)
    }

    pub fn ground_operators(&self) -> impl Iterator<Item = &Operator> {
        self.operators.iter().filter(|o| !o.is_satellite())
    }

    pub fn satellite(&self) -> Option<&Operator> {
        self.operators.iter().find(|o| o.is_satellite())
    }

    /// Effective cloud unit cost for a model served on behalf of `op`.
    pub fn cloud_cost_of(&self, op: &Operator, model: ModelId) -> f64 {
        self.cloud_unit_cost.get(&model).copied().unwrap_or(1.0) * op.cloud_access_cost
    }
}

/// One violated invariant found by [`validate_config`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

fn check(violations: &mut Vec<Violation>, ok: bool, subject: &str, message: &str) {
    if !ok {
        violations.push(Violation {
            subject: subject.to_string(),
            message: message.to_string(),
        });
    }
}

/// Check every structural invariant of a scenario; returns all violations,
/// not just the first. An empty list means every module accepts the config.
pub fn validate_config(cfg: &ScenarioConfig) -> Vec<Violation> {
    let mut v = Vec::new();

    check(&mut v, cfg.horizon_slots >= 1, "scenario", "horizon_slots must be >= 1");
    check(&mut v, cfg.noise_power > 0.0, "scenario", "noise_power must be > 0");
    check(&mut v, cfg.aot_vanish >= 0.0, "scenario", "aot_vanish must be >= 0");
    if cfg.decay_mode == DecayMode::Proportional {
        check(
            &mut v,
            cfg.aot_vanish <= 1.0,
            "scenario",
            "proportional decay requires aot_vanish in [0, 1]",
        );
    }
    check(
        &mut v,
        cfg.optimality_gap_threshold > 0.0,
        "scenario",
        "optimality_gap_threshold must be > 0",
    );
    check(&mut v, !cfg.models.is_empty(), "scenario", "at least one model required");
    check(&mut v, !cfg.services.is_empty(), "scenario", "at least one service required");
    check(&mut v, !cfg.operators.is_empty(), "scenario", "at least one operator required");
    check(
        &mut v,
        cfg.geometry.validate().is_ok(),
        "geometry",
        "satellite geometry parameters out of range",
    );

    for m in &cfg.models {
        let subject = format!("model {}", m.id);
        check(&mut v, m.size_gb > 0.0, &subject, "size_gb must be > 0");
        check(&mut v, m.energy_per_token > 0.0, &subject, "energy_per_token must be > 0");
        check(&mut v, m.context_window > 0, &subject, "context_window must be > 0");
        check(
            &mut v,
            (0.0..0.5).contains(&m.cot_noise_sigma),
            &subject,
            "sigma must be < 0.5 and >= 0",
        );
        check(
            &mut v,
            cfg.models.iter().filter(|o| o.id == m.id).count() == 1,
            &subject,
            "duplicate model id",
        );
    }

    for s in &cfg.services {
        let subject = format!("service {}", s.id);
        check(&mut v, s.input_size_mb > 0.0, &subject, "input_size_mb must be > 0");
        check(
            &mut v,
            s.cot_example_tokens > 0 && s.cot_example_tokens <= MAX_COT_EXAMPLE_TOKENS,
            &subject,
            "cot_example_tokens must be in (0, 200]",
        );
        check(
            &mut v,
            cfg.model(s.affinity_model).is_some(),
            &subject,
            "affinity_model references an unknown model",
        );
        for m in &cfg.models {
            match s.zero_shot_accuracy.get(&m.id) {
                Some(a) => check(
                    &mut v,
                    *a > 0.0 && *a <= 1.0,
                    &subject,
                    &format!("accuracy for model {} must be in (0, 1]", m.id),
                ),
                None => check(
                    &mut v,
                    false,
                    &subject,
                    &format!("missing zero_shot_accuracy for model {}", m.id),
                ),
            }
        }
        check(
            &mut v,
            cfg.services.iter().filter(|o| o.id == s.id).count() == 1,
            &subject,
            "duplicate service id",
        );
    }

    let satellites = cfg.operators.iter().filter(|o| o.is_satellite()).count();
    check(&mut v, satellites <= 1, "operators", "at most one satellite supported");
    for o in &cfg.operators {
        let subject = format!("operator {}", o.id);
        if o.is_satellite() {
            check(&mut v, o.id == 0, &subject, "satellite must have id 0");
            check(&mut v, o.gpu_memory_gb == 0.0, &subject, "satellite caches nothing");
        } else {
            check(&mut v, o.gpu_memory_gb > 0.0, &subject, "gpu_memory_gb must be > 0");
            check(&mut v, o.compute_rate > 0.0, &subject, "compute_rate must be > 0");
        }
        check(&mut v, o.bandwidth_hz > 0.0, &subject, "bandwidth_hz must be > 0");
        check(&mut v, o.gpu_energy_budget >= 0.0, &subject, "gpu_energy_budget must be >= 0");
        check(&mut v, o.core_rate > 0.0, &subject, "core_rate must be > 0");
        check(&mut v, o.edge_access_cost >= 0.0, &subject, "edge_access_cost must be >= 0");
        check(&mut v, o.cloud_access_cost >= 0.0, &subject, "cloud_access_cost must be >= 0");
        check(&mut v, o.switch_coeff >= 0.0, &subject, "switch_coeff must be >= 0");
        check(
            &mut v,
            cfg.operators.iter().filter(|p| p.id == o.id).count() == 1,
            &subject,
            "duplicate operator id",
        );
        for u in &o.users {
            let us = format!("operator {} user {}", o.id, u.id);
            check(&mut v, u.transmit_power_w > 0.0, &us, "transmit_power_w must be > 0");
            check(&mut v, u.mean_channel_gain >= 0.0, &us, "mean_channel_gain must be >= 0");
            check(&mut v, u.request_rate >= 0.0, &us, "request_rate must be >= 0");
        }
    }

    let rl = &cfg.rl;
    check(&mut v, (0.0..1.0).contains(&rl.gamma), "rl", "gamma must be in [0, 1)");
    check(
        &mut v,
        (0.0..=1.0).contains(&rl.epsilon_start) && (0.0..=1.0).contains(&rl.epsilon_end),
        "rl",
        "epsilon bounds must be in [0, 1]",
    );
    check(&mut v, rl.action_count >= 2, "rl", "action_count must be >= 2");
    check(&mut v, rl.batch_size >= 1, "rl", "batch_size must be >= 1");
    check(&mut v, rl.buffer_capacity >= rl.batch_size, "rl", "buffer must hold a batch");
    check(&mut v, !rl.hidden_sizes.is_empty(), "rl", "at least one hidden layer required");

    check(&mut v, cfg.market.jitter_sigma >= 0.0, "market", "jitter_sigma must be >= 0");
    check(
        &mut v,
        cfg.market.satellite_value_factor > 0.0,
        "market",
        "satellite_value_factor must be > 0",
    );
    check(&mut v, cfg.market.warmup_rounds >= 1, "market", "warmup_rounds must be >= 1");

    for key in &cfg.unknown_keys {
        check(&mut v, false, "config", &format!("unknown key {key}"));
    }

    v
}

/// Zero-shot accuracies of the six perception modalities used as service
/// accuracy defaults (images, video, infrared, depth, audio, IMU).
pub const MODALITY_ACCURACY: [f64; 6] = [0.777, 0.500, 0.634, 0.540, 0.669, 0.250];

/// Per-GPU constants used to derive capacity defaults.
pub const GPU_MEMORY_GB: f64 = 80.0;
pub const GPU_GFLOPS: f64 = 810.0;
pub const GPU_POWER_W: f64 = 300.0;

/// Shape of the default scenario; tweak counts to derive sweep points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioShape {
    pub ground_bs: usize,
    pub services: usize,
    pub models: usize,
    pub gpus_per_bs: usize,
    pub users_per_operator: usize,
    pub horizon_slots: u64,
    pub seed: u64,
}

impl Default for ScenarioShape {
    fn default() -> Self {
        ScenarioShape {
            ground_bs: 5,
            services: 10,
            models: 10,
            gpus_per_bs: 24,
            users_per_operator: 10,
            horizon_slots: 100,
            seed: 42,
        }
    }
}

impl ScenarioConfig {
    /// The default evaluation scenario: one relaying satellite plus five
    /// ground BSs with 24x80 GB GPUs, ten services over ten models
    /// (alternating 65B / 174B classes), ten users per operator.
    pub fn default_scenario() -> ScenarioConfig {
        ScenarioConfig::from_shape(ScenarioShape::default())
    }

    pub fn from_shape(shape: ScenarioShape) -> ScenarioConfig {
        // Deterministic per-entity draws, independent of how many entities
        // precede them; domain-separated from the simulation stream.
        let mut rng = ChaCha8Rng::seed_from_u64(shape.seed ^ 0x5eed_c0f9);

        let mut models = Vec::new();
        for id in 0..shape.models as ModelId {
            let heavy = id % 2 == 1;
            let (params, size, window, name) = if heavy {
                (174e9 as u64, 348.0, 8192, format!("gpt3-174b-{id}"))
            } else {
                (65e9 as u64, 130.0, 2048, format!("llama-65b-{id}"))
            };
            models.push(LlmModel {
                id,
                name,
                param_count: params,
                // Standard half-precision serving estimate: 2N FLOPs/token.
                energy_per_token: 2.0 * params as f64 * 1e-9,
                size_gb: size,
                context_window: window,
                cot_noise_sigma: if heavy { 0.38 } else { 0.44 },
            });
        }

        let mut services = Vec::new();
        for id in 0..shape.services as ServiceId {
            let input_size_mb = 100.0 + 100.0 * rng.gen::<f64>();
            let cot_example_tokens = rng.gen_range(50..=MAX_COT_EXAMPLE_TOKENS);
            let alpha = MODALITY_ACCURACY[id as usize % MODALITY_ACCURACY.len()];
            let accuracy = models.iter().map(|m| (m.id, alpha)).collect();
            services.push(Service {
                id,
                input_size_mb,
                cot_example_tokens,
                zero_shot_accuracy: accuracy,
                affinity_model: id % shape.models as ModelId,
            });
        }

        let make_users = |rng: &mut ChaCha8Rng, satellite: bool| -> Vec<User> {
            (0..shape.users_per_operator as u32)
                .map(|id| {
                    let (gain_ref, d_ref, exponent, d_range) = if satellite {
                        (1e-13, 780e3, 2.0, (780e3, 1500e3))
                    } else {
                        (1e-10, 1e3, 3.0, (200.0, 2000.0))
                    };
                    let d = rng.gen_range(d_range.0..d_range.1);
                    User {
                        id,
                        transmit_power_w: 0.2,
                        mean_channel_gain: gain_ref * (d / d_ref).powf(-exponent),
                        request_rate: 0.1,
                    }
                })
                .collect()
        };

        let mut operators = Vec::new();
        operators.push(Operator {
            id: 0,
            kind: OperatorKind::Satellite,
            bandwidth_hz: 20e6,
            gpu_memory_gb: 0.0,
            gpu_energy_budget: 0.0,
            compute_rate: 0.0,
            core_rate: 1e10,
            edge_access_cost: 0.005,
            cloud_access_cost: 0.025,
            switch_coeff: 0.5,
            users: make_users(&mut rng, true),
        });
        for n in 1..=shape.ground_bs as OperatorId {
            let gpus = shape.gpus_per_bs as f64;
            operators.push(Operator {
                id: n,
                kind: OperatorKind::GroundBs,
                bandwidth_hz: 20e6,
                gpu_memory_gb: gpus * GPU_MEMORY_GB,
                gpu_energy_budget: gpus * GPU_GFLOPS * GPU_POWER_W,
                compute_rate: gpus * GPU_GFLOPS,
                core_rate: 1e9,
                edge_access_cost: 0.0001,
                cloud_access_cost: 0.04,
                switch_coeff: 0.5,
                users: make_users(&mut rng, false),
            });
        }

        ScenarioConfig {
            cloud_unit_cost: models.iter().map(|m| (m.id, 1.0)).collect(),
            operators,
            services,
            models,
            horizon_slots: shape.horizon_slots,
            noise_power: 1e-13,
            aot_vanish: 0.6,
            decay_mode: DecayMode::Proportional,
            rng_seed: shape.seed,
            geometry: SatelliteGeometry {
                altitude_km: 780.0,
                earth_radius_km: 6371.0,
                velocity_km_s: 7.46,
                min_elevation_rad: 0.0,
                slant_distance_km: 3247.6,
            },
            market: MarketSettings::default(),
            rl: TrainConfig::default(),
            optimality_gap_threshold: 0.25,
            unknown_keys: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn derive_beta_zero() {
        assert_eq!(derive_beta(0.0).unwrap(), 0.0);
    }

    #[test]
    fn derive_beta_one_third() {
        assert_relative_eq!(derive_beta(1.0 / 3.0).unwrap(), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn derive_beta_near_upper_bound() {
        // 0.45 / 0.55 = 9/11, checked against the exact rational.
        let expected = 9.0f64 / 11.0;
        assert_relative_eq!(derive_beta(0.45).unwrap(), expected, max_relative = 1e-15);
    }

    #[test]
    fn derive_beta_rejects_out_of_range() {
        assert!(derive_beta(0.5).is_err());
        assert!(derive_beta(-0.01).is_err());
        assert!(derive_beta(1.0).is_err());
    }

    #[test]
    fn derive_beta_strictly_increasing_and_below_one() {
        let mut prev = -1.0;
        for i in 0..50 {
            let sigma = i as f64 * 0.01;
            let beta = derive_beta(sigma).unwrap();
            assert!(beta > prev);
            assert!(beta < 1.0);
            prev = beta;
        }
    }

    #[test]
    fn default_scenario_is_valid() {
        let cfg = ScenarioConfig::default_scenario();
        let violations = validate_config(&cfg);
        assert!(violations.is_empty(), "unexpected: {violations:?}");
        assert_eq!(cfg.operators.len(), 6);
        assert_eq!(cfg.ground_operators().count(), 5);
        let bs = cfg.operator(1).unwrap();
        assert_relative_eq!(bs.gpu_memory_gb, 1920.0);
        assert_relative_eq!(bs.compute_rate, 19_440.0);
        assert_eq!(cfg.model(0).unwrap().context_window, 2048);
        assert_eq!(cfg.model(1).unwrap().context_window, 8192);
    }

    #[test]
    fn sigma_boundary_is_flagged() {
        let mut cfg = ScenarioConfig::default_scenario();
        cfg.models[0].cot_noise_sigma = 0.5;
        let violations = validate_config(&cfg);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].message.contains("sigma must be < 0.5"));
    }

    #[test]
    fn caching_satellite_is_flagged() {
        let mut cfg = ScenarioConfig::default_scenario();
        cfg.operators[0].gpu_memory_gb = 10.0;
        let violations = validate_config(&cfg);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].message.contains("satellite caches nothing"));
    }

    #[test]
    fn unknown_keys_are_violations() {
        let mut cfg = ScenarioConfig::default_scenario();
        cfg.unknown_keys.push("scenario.frobnicate".into());
        let violations = validate_config(&cfg);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].message.contains("unknown key"));
    }

    #[test]
    fn shape_derivations_scale_capacity() {
        let cfg = ScenarioConfig::from_shape(ScenarioShape {
            gpus_per_bs: 8,
            ..ScenarioShape::default()
        });
        let bs = cfg.operator(1).unwrap();
        assert_relative_eq!(bs.gpu_memory_gb, 640.0);
        assert_relative_eq!(bs.compute_rate, 6480.0);
    }

    #[test]
    fn request_matrix_row_extraction() {
        let mut rm = RequestMatrix::default();
        rm.entries.insert((1, 0, 0), 3);
        rm.entries.insert((1, 1, 1), 2);
        rm.entries.insert((2, 0, 0), 7);
        let row = rm.operator_row(1);
        assert_eq!(row.len(), 2);
        assert_eq!(row[&(0, 0)], 3);
        assert_eq!(rm.get(2, 0, 0), 7);
        assert_eq!(rm.get(2, 5, 5), 0);
        assert_eq!(rm.total(), 12);
    }
}

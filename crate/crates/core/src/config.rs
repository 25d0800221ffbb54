//! Plain-text scenario config format.
//!
//! Flat `key = value` lines grouped under bracketed section headers.
//! `[scenario]`, `[geometry]`, `[market]`, and `[rl]` appear at most once;
//! `[model]`, `[service]`, `[operator]`, and `[user]` repeat per entity.
//! `#` starts a comment. Unknown sections or keys are not a parse error:
//! they are collected on the config and rejected by `validate_config`,
//! so a caller sees every problem in one pass.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::domain::{
    DecayMode, LlmModel, MarketSettings, Operator, OperatorKind, ScenarioConfig, Service,
    TrainConfig, User,
};
use crate::link::SatelliteGeometry;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value`")]
    Malformed(usize),
    #[error("line {0}: key `{1}` outside any section")]
    KeyOutsideSection(usize, String),
    #[error("line {0}: cannot parse `{1}` as {2}")]
    BadValue(usize, String, &'static str),
    #[error("[{0}] section missing required key `{1}`")]
    MissingKey(String, String),
    #[error("duplicate [{0}] section")]
    DuplicateSection(String),
}

#[derive(Debug, Clone)]
struct Section {
    name: String,
    entries: Vec<(String, String, usize)>,
}

fn tokenize(text: &str) -> Result<Vec<Section>, ConfigError> {
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            sections.push(Section {
                name: name.trim().to_string(),
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Malformed(line_no))?;
        let section = sections
            .last_mut()
            .ok_or_else(|| ConfigError::KeyOutsideSection(line_no, key.trim().to_string()))?;
        section
            .entries
            .push((key.trim().to_string(), value.trim().to_string(), line_no));
    }
    Ok(sections)
}

struct SectionReader<'a> {
    section: &'a Section,
    used: Vec<bool>,
}

impl<'a> SectionReader<'a> {
    fn new(section: &'a Section) -> Self {
        let used = vec![false; section.entries.len()];
        SectionReader { section, used }
    }

    fn raw(&mut self, key: &str) -> Option<(&'a str, usize)> {
        for (i, (k, v, line)) in self.section.entries.iter().enumerate() {
            if k == key {
                self.used[i] = true;
                return Some((v.as_str(), *line));
            }
        }
        None
    }

    fn f64_opt(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| ConfigError::BadValue(line, v.to_string(), "a number")),
        }
    }

    fn f64_req(&mut self, key: &str) -> Result<f64, ConfigError> {
        self.f64_opt(key)?.ok_or_else(|| {
            ConfigError::MissingKey(self.section.name.clone(), key.to_string())
        })
    }

    fn u64_opt(&mut self, key: &str) -> Result<Option<u64>, ConfigError> {
        // Accept scientific notation for large counts (e.g. 65e9).
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => {
                let as_f = v
                    .parse::<f64>()
                    .map_err(|_| ConfigError::BadValue(line, v.to_string(), "an integer"))?;
                if as_f < 0.0 || as_f.fract() != 0.0 && as_f < 1e15 && v.contains('.') {
                    return Err(ConfigError::BadValue(line, v.to_string(), "an integer"));
                }
                Ok(Some(as_f as u64))
            }
        }
    }

    fn u64_req(&mut self, key: &str) -> Result<u64, ConfigError> {
        self.u64_opt(key)?.ok_or_else(|| {
            ConfigError::MissingKey(self.section.name.clone(), key.to_string())
        })
    }

    fn str_opt(&mut self, key: &str) -> Option<(&'a str, usize)> {
        self.raw(key)
    }

    /// Comma-separated `id:value` pairs.
    fn pair_map(&mut self, key: &str) -> Result<Option<BTreeMap<u32, f64>>, ConfigError> {
        let Some((v, line)) = self.raw(key) else {
            return Ok(None);
        };
        let mut out = BTreeMap::new();
        for piece in v.split(',') {
            let piece = piece.trim();
            if piece.is_empty() {
                continue;
            }
            let (id, val) = piece
                .split_once(':')
                .ok_or(ConfigError::BadValue(line, piece.to_string(), "id:value"))?;
            let id = id
                .trim()
                .parse::<u32>()
                .map_err(|_| ConfigError::BadValue(line, id.to_string(), "an id"))?;
            let val = val
                .trim()
                .parse::<f64>()
                .map_err(|_| ConfigError::BadValue(line, val.to_string(), "a number"))?;
            out.insert(id, val);
        }
        Ok(Some(out))
    }

    fn unknown_keys(&self, sink: &mut Vec<String>) {
        for (i, (k, _, _)) in self.section.entries.iter().enumerate() {
            if !self.used[i] {
                sink.push(format!("{}.{}", self.section.name, k));
            }
        }
    }
}

/// Parse a scenario config from its text form.
///
/// Syntax and type errors fail the parse; unknown keys and sections are
/// collected on the returned config for `validate_config` to report.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let sections = tokenize(text)?;
    let mut cfg = ScenarioConfig::default_scenario();
    cfg.operators.clear();
    cfg.services.clear();
    cfg.models.clear();
    cfg.cloud_unit_cost.clear();
    cfg.unknown_keys.clear();

    let mut unknown = Vec::new();
    let mut seen_scenario = false;
    let mut seen_geometry = false;
    let mut seen_market = false;
    let mut seen_rl = false;
    // Users reference operators by id; resolve after all sections are read.
    let mut pending_users: Vec<(u32, User)> = Vec::new();

    for section in &sections {
        let mut r = SectionReader::new(section);
        match section.name.as_str() {
            "scenario" => {
                if seen_scenario {
                    return Err(ConfigError::DuplicateSection("scenario".into()));
                }
                seen_scenario = true;
                cfg.horizon_slots = r.u64_req("horizon_slots")?;
                cfg.noise_power = r.f64_req("noise_power")?;
                cfg.aot_vanish = r.f64_req("aot_vanish")?;
                cfg.rng_seed = r.u64_req("rng_seed")?;
                if let Some((mode, line)) = r.str_opt("decay_mode") {
                    cfg.decay_mode = match mode {
                        "subtractive" => DecayMode::Subtractive,
                        "proportional" => DecayMode::Proportional,
                        other => {
                            return Err(ConfigError::BadValue(
                                line,
                                other.to_string(),
                                "subtractive|proportional",
                            ))
                        }
                    };
                }
                if let Some(map) = r.pair_map("cloud_unit_cost")? {
                    cfg.cloud_unit_cost = map;
                }
                if let Some(t) = r.f64_opt("optimality_gap_threshold")? {
                    cfg.optimality_gap_threshold = t;
                }
            }
            "geometry" => {
                if seen_geometry {
                    return Err(ConfigError::DuplicateSection("geometry".into()));
                }
                seen_geometry = true;
                cfg.geometry = SatelliteGeometry {
                    altitude_km: r.f64_req("altitude_km")?,
                    earth_radius_km: r.f64_req("earth_radius_km")?,
                    velocity_km_s: r.f64_req("velocity_km_s")?,
                    min_elevation_rad: r.f64_req("min_elevation_rad")?,
                    slant_distance_km: r.f64_opt("slant_distance_km")?.unwrap_or(0.0),
                };
            }
            "market" => {
                if seen_market {
                    return Err(ConfigError::DuplicateSection("market".into()));
                }
                seen_market = true;
                let d = MarketSettings::default();
                cfg.market = MarketSettings {
                    jitter_sigma: r.f64_opt("jitter_sigma")?.unwrap_or(d.jitter_sigma),
                    satellite_value_factor: r
                        .f64_opt("satellite_value_factor")?
                        .unwrap_or(d.satellite_value_factor),
                    warmup_rounds: r.u64_opt("warmup_rounds")?.unwrap_or(d.warmup_rounds),
                    eval_rounds: r.u64_opt("eval_rounds")?.unwrap_or(d.eval_rounds),
                };
            }
            "rl" => {
                if seen_rl {
                    return Err(ConfigError::DuplicateSection("rl".into()));
                }
                seen_rl = true;
                let d = TrainConfig::default();
                let hidden = match r.str_opt("hidden_sizes") {
                    Some((v, line)) => v
                        .split(',')
                        .map(|s| {
                            s.trim().parse::<usize>().map_err(|_| {
                                ConfigError::BadValue(line, s.to_string(), "a layer size")
                            })
                        })
                        .collect::<Result<Vec<_>, _>>()?,
                    None => d.hidden_sizes.clone(),
                };
                cfg.rl = TrainConfig {
                    gamma: r.f64_opt("gamma")?.unwrap_or(d.gamma),
                    learning_rate: r.f64_opt("learning_rate")?.unwrap_or(d.learning_rate),
                    momentum: r.f64_opt("momentum")?.unwrap_or(d.momentum),
                    epsilon_start: r.f64_opt("epsilon_start")?.unwrap_or(d.epsilon_start),
                    epsilon_end: r.f64_opt("epsilon_end")?.unwrap_or(d.epsilon_end),
                    epsilon_decay_steps: r
                        .u64_opt("epsilon_decay_steps")?
                        .unwrap_or(d.epsilon_decay_steps),
                    batch_size: r.u64_opt("batch_size")?.unwrap_or(d.batch_size as u64) as usize,
                    buffer_capacity: r
                        .u64_opt("buffer_capacity")?
                        .unwrap_or(d.buffer_capacity as u64) as usize,
                    target_sync_period: r
                        .u64_opt("target_sync_period")?
                        .unwrap_or(d.target_sync_period),
                    action_count: r.u64_opt("action_count")?.unwrap_or(d.action_count as u64)
                        as usize,
                    episodes: r.u64_opt("episodes")?.unwrap_or(d.episodes),
                    iters_per_episode: r
                        .u64_opt("iters_per_episode")?
                        .unwrap_or(d.iters_per_episode),
                    hidden_sizes: hidden,
                };
            }
            "model" => {
                let id = r.u64_req("id")? as u32;
                let name = r
                    .str_opt("name")
                    .map(|(v, _)| v.to_string())
                    .unwrap_or_else(|| format!("model-{id}"));
                cfg.models.push(LlmModel {
                    id,
                    name,
                    param_count: r.u64_req("param_count")?,
                    size_gb: r.f64_req("size_gb")?,
                    energy_per_token: r.f64_req("energy_per_token")?,
                    context_window: r.u64_req("context_window")?,
                    cot_noise_sigma: r.f64_req("cot_noise_sigma")?,
                });
            }
            "service" => {
                let id = r.u64_req("id")? as u32;
                cfg.services.push(Service {
                    id,
                    input_size_mb: r.f64_req("input_size_mb")?,
                    cot_example_tokens: r.u64_req("cot_example_tokens")?,
                    zero_shot_accuracy: r.pair_map("zero_shot_accuracy")?.unwrap_or_default(),
                    affinity_model: r.u64_req("affinity_model")? as u32,
                });
            }
            "operator" => {
                let id = r.u64_req("id")? as u32;
                let kind = match r.str_opt("kind") {
                    Some(("satellite", _)) => OperatorKind::Satellite,
                    Some(("ground_bs", _)) => OperatorKind::GroundBs,
                    Some((other, line)) => {
                        return Err(ConfigError::BadValue(
                            line,
                            other.to_string(),
                            "satellite|ground_bs",
                        ))
                    }
                    None => {
                        return Err(ConfigError::MissingKey("operator".into(), "kind".into()))
                    }
                };
                cfg.operators.push(Operator {
                    id,
                    kind,
                    bandwidth_hz: r.f64_req("bandwidth_hz")?,
                    gpu_memory_gb: r.f64_opt("gpu_memory_gb")?.unwrap_or(0.0),
                    gpu_energy_budget: r.f64_opt("gpu_energy_budget")?.unwrap_or(0.0),
                    compute_rate: r.f64_opt("compute_rate")?.unwrap_or(0.0),
                    core_rate: r.f64_req("core_rate")?,
                    edge_access_cost: r.f64_req("edge_access_cost")?,
                    cloud_access_cost: r.f64_req("cloud_access_cost")?,
                    switch_coeff: r.f64_opt("switch_coeff")?.unwrap_or(0.5),
                    users: Vec::new(),
                });
            }
            "user" => {
                let op = r.u64_req("operator")? as u32;
                pending_users.push((
                    op,
                    User {
                        id: r.u64_req("id")? as u32,
                        transmit_power_w: r.f64_req("transmit_power_w")?,
                        mean_channel_gain: r.f64_req("mean_channel_gain")?,
                        request_rate: r.f64_req("request_rate")?,
                    },
                ));
            }
            other => {
                unknown.push(format!("{other}.*"));
                continue;
            }
        }
        r.unknown_keys(&mut unknown);
    }

    for (op_id, user) in pending_users {
        match cfg.operators.iter_mut().find(|o| o.id == op_id) {
            Some(op) => op.users.push(user),
            None => unknown.push(format!("user.operator={op_id} (no such operator)")),
        }
    }

    cfg.unknown_keys = unknown;
    Ok(cfg)
}

fn render_pair_map(map: &BTreeMap<u32, f64>) -> String {
    map.iter()
        .map(|(k, v)| format!("{k}:{v}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Render a config to the text format; `parse_config` round-trips it.
pub fn render_config(cfg: &ScenarioConfig) -> String {
    let mut out = String::new();
    use std::fmt::Write;

    writeln!(out, "[scenario]").unwrap();
    writeln!(out, "horizon_slots = {}", cfg.horizon_slots).unwrap();
    writeln!(out, "noise_power = {}", cfg.noise_power).unwrap();
    writeln!(out, "aot_vanish = {}", cfg.aot_vanish).unwrap();
    writeln!(out, "decay_mode = {}", cfg.decay_mode).unwrap();
    writeln!(out, "rng_seed = {}", cfg.rng_seed).unwrap();
    writeln!(out, "cloud_unit_cost = {}", render_pair_map(&cfg.cloud_unit_cost)).unwrap();
    writeln!(out, "optimality_gap_threshold = {}", cfg.optimality_gap_threshold).unwrap();

    writeln!(out, "\n[geometry]").unwrap();
    writeln!(out, "altitude_km = {}", cfg.geometry.altitude_km).unwrap();
    writeln!(out, "earth_radius_km = {}", cfg.geometry.earth_radius_km).unwrap();
    writeln!(out, "velocity_km_s = {}", cfg.geometry.velocity_km_s).unwrap();
    writeln!(out, "min_elevation_rad = {}", cfg.geometry.min_elevation_rad).unwrap();
    writeln!(out, "slant_distance_km = {}", cfg.geometry.slant_distance_km).unwrap();

    writeln!(out, "\n[market]").unwrap();
    writeln!(out, "jitter_sigma = {}", cfg.market.jitter_sigma).unwrap();
    writeln!(out, "satellite_value_factor = {}", cfg.market.satellite_value_factor).unwrap();
    writeln!(out, "warmup_rounds = {}", cfg.market.warmup_rounds).unwrap();
    writeln!(out, "eval_rounds = {}", cfg.market.eval_rounds).unwrap();

    writeln!(out, "\n[rl]").unwrap();
    writeln!(out, "gamma = {}", cfg.rl.gamma).unwrap();
    writeln!(out, "learning_rate = {}", cfg.rl.learning_rate).unwrap();
    writeln!(out, "momentum = {}", cfg.rl.momentum).unwrap();
    writeln!(out, "epsilon_start = {}", cfg.rl.epsilon_start).unwrap();
    writeln!(out, "epsilon_end = {}", cfg.rl.epsilon_end).unwrap();
    writeln!(out, "epsilon_decay_steps = {}", cfg.rl.epsilon_decay_steps).unwrap();
    writeln!(out, "batch_size = {}", cfg.rl.batch_size).unwrap();
    writeln!(out, "buffer_capacity = {}", cfg.rl.buffer_capacity).unwrap();
    writeln!(out, "target_sync_period = {}", cfg.rl.target_sync_period).unwrap();
    writeln!(out, "action_count = {}", cfg.rl.action_count).unwrap();
    writeln!(out, "episodes = {}", cfg.rl.episodes).unwrap();
    writeln!(out, "iters_per_episode = {}", cfg.rl.iters_per_episode).unwrap();
    writeln!(
        out,
        "hidden_sizes = {}",
        cfg.rl
            .hidden_sizes
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",")
    )
    .unwrap();

    for m in &cfg.models {
        writeln!(out, "\n[model]").unwrap();
        writeln!(out, "id = {}", m.id).unwrap();
        writeln!(out, "name = {}", m.name).unwrap();
        writeln!(out, "param_count = {}", m.param_count).unwrap();
        writeln!(out, "size_gb = {}", m.size_gb).unwrap();
        writeln!(out, "energy_per_token = {}", m.energy_per_token).unwrap();
        writeln!(out, "context_window = {}", m.context_window).unwrap();
        writeln!(out, "cot_noise_sigma = {}", m.cot_noise_sigma).unwrap();
    }

    for s in &cfg.services {
        writeln!(out, "\n[service]").unwrap();
        writeln!(out, "id = {}", s.id).unwrap();
        writeln!(out, "input_size_mb = {}", s.input_size_mb).unwrap();
        writeln!(out, "cot_example_tokens = {}", s.cot_example_tokens).unwrap();
        writeln!(out, "zero_shot_accuracy = {}", render_pair_map(&s.zero_shot_accuracy)).unwrap();
        writeln!(out, "affinity_model = {}", s.affinity_model).unwrap();
    }

    for o in &cfg.operators {
        writeln!(out, "\n[operator]").unwrap();
        writeln!(out, "id = {}", o.id).unwrap();
        writeln!(out, "kind = {}", o.kind).unwrap();
        writeln!(out, "bandwidth_hz = {}", o.bandwidth_hz).unwrap();
        writeln!(out, "gpu_memory_gb = {}", o.gpu_memory_gb).unwrap();
        writeln!(out, "gpu_energy_budget = {}", o.gpu_energy_budget).unwrap();
        writeln!(out, "compute_rate = {}", o.compute_rate).unwrap();
        writeln!(out, "core_rate = {}", o.core_rate).unwrap();
        writeln!(out, "edge_access_cost = {}", o.edge_access_cost).unwrap();
        writeln!(out, "cloud_access_cost = {}", o.cloud_access_cost).unwrap();
        writeln!(out, "switch_coeff = {}", o.switch_coeff).unwrap();
        for u in &o.users {
            writeln!(out, "\n[user]").unwrap();
            writeln!(out, "operator = {}", o.id).unwrap();
            writeln!(out, "id = {}", u.id).unwrap();
            writeln!(out, "transmit_power_w = {}", u.transmit_power_w).unwrap();
            writeln!(out, "mean_channel_gain = {}", u.mean_channel_gain).unwrap();
            writeln!(out, "request_rate = {}", u.request_rate).unwrap();
        }
    }

    out
}

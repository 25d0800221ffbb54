//! Independent oracles and property suites.
//!
//! Everything here deliberately re-derives results through a second code
//! path: the caching oracle enumerates decision sequences with its own
//! inline cost recursion, the mechanism fuzzers replay allocation rules
//! against brute-force utility scans, and the posterior-gap sweep drives the
//! exact enumeration oracle over random finite models. Reports carry
//! reproduction seeds.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::caching::CachePolicy;
use crate::cost::BITS_PER_MB;
use crate::domain::{DecayMode, ScenarioConfig, ScenarioShape};
use crate::market::{msb, spa, BidProfile, Winner};
use crate::oracle::{oracle_posterior_gap, FiniteLatentModel, Message};
use crate::sim;

#[derive(Debug, Error, PartialEq)]
pub enum VerifyError {
    #[error("instance too large for exhaustive search: {0}")]
    InstanceTooLarge(String),
}

/// One reproducible counterexample.
#[derive(Debug, Clone, PartialEq)]
pub struct ViolationRecord {
    pub seed: u64,
    pub detail: String,
}

/// Outcome of one suite run; empty violations means the suite passed.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub suite: String,
    pub cases: u64,
    /// Trials skipped because they fall outside a precondition (counted,
    /// never treated as failures).
    pub out_of_precondition: u64,
    pub violations: Vec<ViolationRecord>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("suite,cases,out_of_precondition,violation_seed,detail\n");
        if self.violations.is_empty() {
            out.push_str(&format!(
                "{},{},{},,\n",
                self.suite, self.cases, self.out_of_precondition
            ));
        }
        for v in &self.violations {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.suite,
                self.cases,
                self.out_of_precondition,
                v.seed,
                v.detail.replace(',', ";")
            ));
        }
        out
    }
}

// --- Exhaustive caching oracle ---------------------------------------------

/// Exact optimum of a tiny instance.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptimum {
    pub optimal_cost: f64,
    /// Per slot, per requested pair: (cached, cloud share).
    pub decisions: Vec<BTreeMap<(u32, u32), (bool, f64)>>,
    pub sequences_evaluated: u64,
}

/// Brute-force minimizer of the time-averaged total cost of the single
/// ground BS in a tiny scenario: caching is enumerated per requested pair
/// and slot, offloading over the {0, 1/2, 1} grid. Pairs that never receive
/// a request are left uncached; no cost term ever decreases by caching an
/// unrequested pair, so the reduction is exact.
pub fn exhaustive_caching_oracle(cfg: &ScenarioConfig) -> Result<OracleOptimum, VerifyError> {
    let ground: Vec<_> = cfg.ground_operators().collect();
    if ground.len() != 1 || cfg.services.len() > 3 || cfg.models.len() > 2 || cfg.horizon_slots > 2
    {
        return Err(VerifyError::InstanceTooLarge(format!(
            "{} ground BS, {} services, {} models, {} slots (need 1, <=3, <=2, <=2)",
            ground.len(),
            cfg.services.len(),
            cfg.models.len(),
            cfg.horizon_slots
        )));
    }
    let op = ground[0];
    let slots = cfg.horizon_slots as usize;

    // Reproduce the request trace the simulator would draw.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let rows: Vec<BTreeMap<(u32, u32), u64>> = (0..cfg.horizon_slots)
        .map(|slot| sim::generate_requests(&mut rng, cfg, slot).operator_row(op.id))
        .collect();

    let mut pairs: Vec<(u32, u32)> = rows
        .iter()
        .flat_map(|row| row.iter().filter(|(_, &r)| r > 0).map(|(&p, _)| p))
        .collect();
    pairs.sort();
    pairs.dedup();

    // Mean uplink rate, derived inline rather than through the link module.
    let mean_rate = {
        let users: Vec<(f64, f64)> = op
            .users
            .iter()
            .map(|u| (u.mean_channel_gain, u.transmit_power_w))
            .collect();
        if users.is_empty() {
            f64::INFINITY
        } else {
            let mut sum = 0.0;
            for (i, &(g, p)) in users.iter().enumerate() {
                let interference: f64 = users
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, &(gj, pj))| gj * pj)
                    .sum();
                sum += op.bandwidth_hz
                    * (1.0 + g * p / (interference + cfg.noise_power)).log2();
            }
            sum / users.len() as f64
        }
    };

    // Option encoding per (slot, pair): 0 = uncached, 1..=3 = cached with
    // cloud share 0, 1/2, 1.
    const OPTIONS: [(bool, f64); 4] = [(false, 1.0), (true, 0.0), (true, 0.5), (true, 1.0)];
    let cells = pairs.len() * slots;
    let total = 4u64.pow(cells as u32);

    let mut best_cost = f64::INFINITY;
    let mut best: Option<Vec<BTreeMap<(u32, u32), (bool, f64)>>> = None;
    let mut evaluated = 0u64;

    'outer: for code in 0..total {
        // Decode per-slot assignments.
        let mut assignment: Vec<Vec<(bool, f64)>> = Vec::with_capacity(slots);
        let mut rest = code;
        for _ in 0..slots {
            let mut slot_choice = Vec::with_capacity(pairs.len());
            for _ in 0..pairs.len() {
                slot_choice.push(OPTIONS[(rest % 4) as usize]);
                rest /= 4;
            }
            assignment.push(slot_choice);
        }
        evaluated += 1;

        // Inline dynamics and costs, independent of the library modules.
        let mut tokens: Vec<f64> = vec![0.0; pairs.len()];
        let mut aot: Vec<f64> = vec![0.0; pairs.len()];
        let mut prev_cached: Vec<bool> = vec![false; pairs.len()];
        let mut cost_sum = 0.0;

        for (slot, choices) in assignment.iter().enumerate() {
            let row = &rows[slot];
            let mut memory = 0.0;
            let mut energy = 0.0;
            let mut slot_cost = 0.0;
            for (idx, &(cached, cloud)) in choices.iter().enumerate() {
                let (service_id, model_id) = pairs[idx];
                let service = cfg.service(service_id).unwrap();
                let model = cfg.model(model_id).unwrap();
                let r = row.get(&pairs[idx]).copied().unwrap_or(0) as f64;
                let edge = if cached { 1.0 - cloud } else { 0.0 };
                if edge > 0.0 && r > 0.0 && !cached {
                    continue 'outer;
                }
                if cached {
                    memory += model.size_gb;
                }
                energy += model.energy_per_token * edge * r;

                let delta = edge * r * service.cot_example_tokens as f64;
                let new_tokens = if cached { tokens[idx] + delta } else { 0.0 };
                if cached && new_tokens > model.context_window as f64 {
                    continue 'outer;
                }
                let new_aot = if cached {
                    match cfg.decay_mode {
                        DecayMode::Subtractive => (aot[idx] + delta - cfg.aot_vanish).max(0.0),
                        DecayMode::Proportional => {
                            ((1.0 - cfg.aot_vanish) * aot[idx] + delta).max(0.0)
                        }
                    }
                } else {
                    0.0
                };

                // Switching: loads only.
                if cached && !prev_cached[idx] {
                    slot_cost += op.switch_coeff;
                }
                // Transmission with the effective cloud share.
                let cloud_eff = if cached { cloud } else { 1.0 };
                if r > 0.0 {
                    let bits = service.input_size_mb * BITS_PER_MB;
                    slot_cost += op.edge_access_cost
                        * r
                        * (bits / mean_rate + bits / op.core_rate * cloud_eff);
                    // Compute.
                    slot_cost += delta * model.energy_per_token / op.compute_rate;
                    // Accuracy at the post-update context.
                    let alpha = service.zero_shot_accuracy[&model_id];
                    let beta = model.cot_gain_beta();
                    let log_gain = if beta > 0.0 { (1.0 / beta).ln().min(50.0) } else { 50.0 };
                    slot_cost +=
                        (1.0 - alpha) / (new_aot.max(1.0) * log_gain) * r * edge;
                    // Cloud.
                    let unit = cfg.cloud_unit_cost.get(&model_id).copied().unwrap_or(1.0)
                        * op.cloud_access_cost;
                    slot_cost += unit * cloud_eff * r;
                }

                tokens[idx] = new_tokens;
                aot[idx] = new_aot;
            }
            if memory > op.gpu_memory_gb + 1e-9 || energy > op.gpu_energy_budget + 1e-9 {
                continue 'outer;
            }
            for (idx, &(cached, _)) in choices.iter().enumerate() {
                prev_cached[idx] = cached;
            }
            cost_sum += slot_cost;
        }

        let avg = cost_sum / slots.max(1) as f64;
        if avg < best_cost {
            best_cost = avg;
            best = Some(
                assignment
                    .iter()
                    .map(|choices| {
                        pairs
                            .iter()
                            .copied()
                            .zip(choices.iter().copied())
                            .collect::<BTreeMap<_, _>>()
                    })
                    .collect(),
            );
        }
    }

    Ok(OracleOptimum {
        optimal_cost: best_cost,
        decisions: best.unwrap_or_default(),
        sequences_evaluated: evaluated,
    })
}

/// Random tiny scenario for the optimality-gap suite.
pub fn tiny_instance(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x71ab_22d1);
    let services = rng.gen_range(1..=3usize);
    let slots = rng.gen_range(1..=2u64);
    let mut cfg = ScenarioConfig::from_shape(ScenarioShape {
        ground_bs: 1,
        services,
        models: 2,
        gpus_per_bs: 4,
        users_per_operator: 2,
        horizon_slots: slots,
        seed,
    });
    // Constrain memory so contention is plausible and sometimes force the
    // energy budget to zero (full offload is then the only feasible edge
    // alternative).
    cfg.operators[1].gpu_memory_gb = [150.0, 300.0, 500.0][rng.gen_range(0..3)];
    if rng.gen_bool(0.2) {
        cfg.operators[1].gpu_energy_budget = 0.0;
    }
    for op in &mut cfg.operators {
        for u in &mut op.users {
            u.request_rate = 0.3;
        }
    }
    cfg
}

/// Least-AoT optimality-gap suite: on enumerable instances the policy's
/// time-averaged total must stay within the configured threshold of the
/// exhaustive optimum and may never be infeasible.
pub fn caching_gap_suite(instances: u64, base_seed: u64) -> OracleReport {
    let mut report = OracleReport {
        suite: "caching_gap".into(),
        cases: 0,
        out_of_precondition: 0,
        violations: Vec::new(),
    };
    for i in 0..instances {
        let seed = base_seed.wrapping_add(i);
        let cfg = tiny_instance(seed);
        let threshold = cfg.optimality_gap_threshold;
        let oracle = match exhaustive_caching_oracle(&cfg) {
            Ok(o) => o,
            Err(e) => {
                report.violations.push(ViolationRecord {
                    seed,
                    detail: format!("oracle refused instance: {e}"),
                });
                continue;
            }
        };
        report.cases += 1;
        match sim::run_scenario(&cfg, CachePolicy::LeastAot) {
            Ok(result) => {
                let policy_cost = result.mean_ground_total();
                let allowed = oracle.optimal_cost * (1.0 + threshold) + 1e-9;
                if policy_cost > allowed {
                    report.violations.push(ViolationRecord {
                        seed,
                        detail: format!(
                            "least_aot {policy_cost} exceeds optimum {} by more than {}%",
                            oracle.optimal_cost,
                            threshold * 100.0
                        ),
                    });
                }
            }
            Err(e) => report.violations.push(ViolationRecord {
                seed,
                detail: format!("least_aot infeasible or failed: {e}"),
            }),
        }
    }
    report
}

// --- Mechanism fuzzers -------------------------------------------------

/// Mechanism under test for the fuzzers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MechanismUnderTest {
    /// Scaled second-bid with a fixed factor.
    Msb { rho: f64 },
    /// Intentionally manipulable control: the highest bidder wins and pays
    /// its own bid. Used to confirm the fuzzer detects violations.
    FirstPrice,
}

fn outcome_of(mechanism: MechanismUnderTest, bids: &BidProfile) -> (Winner, f64) {
    match mechanism {
        MechanismUnderTest::Msb { rho } => {
            let out = msb(bids, rho);
            (out.winner, out.payment)
        }
        MechanismUnderTest::FirstPrice => {
            let mut winner = Winner::Satellite;
            let mut best = bids.satellite_contract;
            for (n, &b) in bids.ground_bids.iter().enumerate() {
                if b > best {
                    best = b;
                    winner = Winner::Ground(n);
                }
            }
            (winner, best)
        }
    }
}

fn random_profile(rng: &mut ChaCha8Rng, max_ground: usize) -> (BidProfile, Vec<f64>) {
    let n = rng.gen_range(2..=max_ground);
    let values: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..100.0)).collect();
    let contract = rng.gen_range(0.1..100.0);
    (BidProfile::new(contract, values.clone()), values)
}

/// Strategy-proofness fuzz under truthful ground bidding: no bidder may
/// strictly gain from any deviation on a geometric grid around truth plus
/// nudges at the critical payment.
pub fn strategyproofness_fuzz(
    mechanism: MechanismUnderTest,
    profiles: u64,
    deviations_per_bidder: usize,
    base_seed: u64,
) -> OracleReport {
    let suite = match mechanism {
        MechanismUnderTest::Msb { rho } => format!("strategyproof_msb_rho_{rho:.3}"),
        MechanismUnderTest::FirstPrice => "strategyproof_first_price".into(),
    };
    let mut report =
        OracleReport { suite, cases: 0, out_of_precondition: 0, violations: Vec::new() };

    for p in 0..profiles {
        let seed = base_seed.wrapping_add(p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (profile, values) = random_profile(&mut rng, 6);
        report.cases += 1;

        for (n, &value) in values.iter().enumerate() {
            let utility = |bid: f64| -> f64 {
                let mut bids = profile.clone();
                bids.ground_bids[n] = bid;
                let (winner, payment) = outcome_of(mechanism, &bids);
                if winner == Winner::Ground(n) {
                    value - payment
                } else {
                    0.0
                }
            };
            let truthful = utility(value);

            // Geometric deviation grid plus boundary nudges at the critical
            // payment, where violations would concentrate.
            let mut candidates: Vec<f64> = (0..deviations_per_bidder)
                .map(|i| {
                    let t = i as f64 / (deviations_per_bidder.max(2) - 1) as f64;
                    value * 0.5 * 4.0f64.powf(t)
                })
                .collect();
            if let MechanismUnderTest::Msb { rho } = mechanism {
                let chi = rho * profile.best_competing(n);
                candidates.extend([
                    chi,
                    chi * (1.0 + 1e-12),
                    chi * (1.0 - 1e-12),
                ]);
            }
            for dev in candidates {
                let gained = utility(dev);
                if gained > truthful + 1e-9 {
                    report.violations.push(ViolationRecord {
                        seed,
                        detail: format!(
                            "bidder {n} value {value} gains {gained} > {truthful} by bidding {dev}"
                        ),
                    });
                }
            }
        }
    }
    report
}

/// Degree-one homogeneity fuzz: scaling a whole profile by c > 0 preserves
/// the winner and scales payments by exactly c (within rounding).
pub fn scaling_invariance_fuzz(rho: f64, cases: u64, base_seed: u64) -> OracleReport {
    let mut report = OracleReport {
        suite: format!("scaling_invariance_rho_{rho:.3}"),
        cases: 0,
        out_of_precondition: 0,
        violations: Vec::new(),
    };
    for i in 0..cases {
        let seed = base_seed.wrapping_add(i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (profile, _) = random_profile(&mut rng, 6);
        let c = rng.gen_range(0.01..100.0);
        report.cases += 1;

        let base = msb(&profile, rho);
        let scaled_profile = BidProfile::new(
            profile.satellite_contract * c,
            profile.ground_bids.iter().map(|b| b * c).collect(),
        );
        let scaled = msb(&scaled_profile, rho);
        if base.winner != scaled.winner {
            report.violations.push(ViolationRecord {
                seed,
                detail: format!(
                    "winner changed under scaling by {c}: {:?} vs {:?}",
                    base.winner, scaled.winner
                ),
            });
            continue;
        }
        let expected = base.payment * c;
        let err = (scaled.payment - expected).abs() / expected.abs().max(1e-12);
        if err > 1e-9 {
            report.violations.push(ViolationRecord {
                seed,
                detail: format!(
                    "payment {} not {}x base {} (rel err {err})",
                    scaled.payment, c, base.payment
                ),
            });
        }
    }
    report
}

/// With rho = 1 and all-distinct bids, the scaled mechanism and the plain
/// second-price auction must agree exactly.
pub fn spa_equivalence_fuzz(cases: u64, base_seed: u64) -> OracleReport {
    let mut report = OracleReport {
        suite: "spa_equivalence".into(),
        cases: 0,
        out_of_precondition: 0,
        violations: Vec::new(),
    };
    for i in 0..cases {
        let seed = base_seed.wrapping_add(i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=6);
        // Distinct bids by construction: strictly increasing draws, shuffled.
        let mut bids: Vec<f64> = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        for _ in 0..=n {
            acc += rng.gen_range(0.01..10.0);
            bids.push(acc);
        }
        for j in (1..bids.len()).rev() {
            bids.swap(j, rng.gen_range(0..=j));
        }
        let contract = bids.pop().unwrap();
        let profile = BidProfile::new(contract, bids);
        report.cases += 1;

        let a = msb(&profile, 1.0);
        let b = spa(&profile).expect("two or more bids");
        if a != b {
            report.violations.push(ViolationRecord {
                seed,
                detail: format!("msb(rho=1) {a:?} != spa {b:?}"),
            });
        }
    }
    report
}

// --- Posterior-gap sweep ---------------------------------------------------

/// Random finite model for the sweep. Uniform context prior unless `skewed`.
pub fn random_latent_model(rng: &mut ChaCha8Rng, skewed: bool, min_contexts: usize) -> FiniteLatentModel {
    let n_ctx = rng.gen_range(min_contexts..=3.max(min_contexts));
    let n_int = rng.gen_range(2..=3);
    let n_tok = rng.gen_range(2..=3);
    let simplex = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / sum).collect()
    };
    let context_prior =
        if skewed { simplex(rng, n_ctx) } else { vec![1.0 / n_ctx as f64; n_ctx] };
    FiniteLatentModel {
        context_prior,
        intention_given_context: (0..n_ctx).map(|_| simplex(rng, n_int)).collect(),
        emission: (0..n_int).map(|_| simplex(rng, n_tok)).collect(),
        true_context: rng.gen_range(0..n_ctx),
        true_intention: rng.gen_range(0..n_int),
    }
}

fn sample_message(rng: &mut ChaCha8Rng, model: &FiniteLatentModel, theta: usize, len: usize) -> Message {
    (0..len)
        .map(|_| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (tok, &p) in model.emission[theta].iter().enumerate() {
                acc += p;
                if u <= acc {
                    return tok;
                }
            }
            model.alphabet() - 1
        })
        .collect()
}

/// Generate a theorem-shaped instance: examples from the true intention,
/// a task from an intention drawn given the true context, and an arbitrary
/// continuation.
pub fn random_gap_instance(
    rng: &mut ChaCha8Rng,
    model: &FiniteLatentModel,
) -> (Vec<Message>, Message, usize, Vec<Message>) {
    let examples: Vec<Message> = (0..rng.gen_range(1..=3))
        .map(|_| sample_message(rng, model, model.true_intention, rng.gen_range(1..=3)))
        .collect();
    let weights = &model.intention_given_context[model.true_context];
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut theta0 = model.intentions() - 1;
    for (t, &w) in weights.iter().enumerate() {
        acc += w;
        if u <= acc {
            theta0 = t;
            break;
        }
    }
    let task = sample_message(rng, model, theta0, rng.gen_range(1..=2));
    let continuation: Vec<Message> = (0..rng.gen_range(1..=2))
        .map(|_| (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(0..model.alphabet())).collect())
        .collect();
    (examples, task, theta0, continuation)
}

/// Sweep the posterior-gap bound over seeded random models: the gap must
/// never exceed the bound; single-context models must produce an exactly
/// zero gap; and wherever every example ambiguity stays below one half the
/// geometric-rate form of the bound must hold as well.
pub fn theorem1_sweep(trials: u64, base_seed: u64, skewed: bool) -> OracleReport {
    let mut report = OracleReport {
        suite: if skewed { "theorem1_skewed".into() } else { "theorem1".into() },
        cases: 0,
        out_of_precondition: 0,
        violations: Vec::new(),
    };
    for i in 0..trials {
        let seed = base_seed.wrapping_add(i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Every tenth trial pins a single-context model to exercise the
        // degenerate case.
        let single = i % 10 == 0;
        let mut model = random_latent_model(&mut rng, skewed && !single, 1);
        if single {
            model = FiniteLatentModel {
                context_prior: vec![1.0],
                intention_given_context: vec![model.intention_given_context[0].clone()],
                emission: model.emission.clone(),
                true_context: 0,
                true_intention: model.true_intention,
            };
        }
        let (examples, task, theta0, continuation) = random_gap_instance(&mut rng, &model);
        report.cases += 1;

        let gap_report = match oracle_posterior_gap(&model, &examples, &task, theta0, &continuation)
        {
            Ok(r) => r,
            Err(e) => {
                report.violations.push(ViolationRecord {
                    seed,
                    detail: format!("oracle failed: {e}"),
                });
                continue;
            }
        };

        if single && gap_report.gap > 1e-12 {
            report.violations.push(ViolationRecord {
                seed,
                detail: format!("single-context gap {} exceeds 1e-12", gap_report.gap),
            });
        }
        if !gap_report.holds(1e-12) {
            report.violations.push(ViolationRecord {
                seed,
                detail: format!("gap {} exceeds bound {}", gap_report.gap, gap_report.bound),
            });
        }

        // Geometric-rate corollary, gated on the low-ambiguity precondition.
        let max_eps = gap_report
            .eps_examples
            .iter()
            .copied()
            .fold(0.0f64, f64::max);
        if max_eps < 0.5 {
            let beta = max_eps / (1.0 - max_eps);
            let geo = gap_report.eta * beta.powi(gap_report.eps_examples.len() as i32);
            if gap_report.gap > geo + 1e-12 {
                report.violations.push(ViolationRecord {
                    seed,
                    detail: format!("gap {} exceeds geometric bound {geo}", gap_report.gap),
                });
            }
        } else {
            report.out_of_precondition += 1;
        }
    }
    report
}

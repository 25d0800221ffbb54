//! Operator valuations and the service allocation market.
//!
//! Ground BSs bid their valuations for the right to serve the agent; the
//! satellite posts a contract price and acts as the fallback. The scaled
//! second-bid mechanism allocates to the top ground bidder only when its bid
//! clears the best competing bid by the factor rho, charging that scaled
//! amount; otherwise the satellite retains the service at its contract
//! price. rho = 1 reduces to a plain second-price auction.

use thiserror::Error;

use crate::cost::CostBreakdown;

#[derive(Debug, Error, PartialEq)]
pub enum MarketError {
    #[error("trace is empty or lengths differ")]
    BadTrace,
    #[error("a second-price auction needs at least two bids")]
    TooFewBids,
    #[error("no competing bids")]
    NoCompetitors,
    #[error("no contract price samples")]
    NoSamples,
}

/// An operator's private valuation: resource-consumption common value times
/// cached-context match gain.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Valuation {
    pub common: f64,
    pub match_gain: f64,
}

impl Valuation {
    pub fn value(&self) -> f64 {
        self.common * self.match_gain
    }
}

/// Average an operator's valuation out of a scenario trace: the common value
/// is the mean per-slot cost excluding the accuracy component, the match
/// gain the mean per-slot context gain `sum kappa * ln(1/beta)`.
pub fn valuation_from_trace(
    costs: &[CostBreakdown],
    match_gains: &[f64],
) -> Result<Valuation, MarketError> {
    if costs.is_empty() || costs.len() != match_gains.len() {
        return Err(MarketError::BadTrace);
    }
    let n = costs.len() as f64;
    let common = costs.iter().map(|c| c.total() - c.accuracy).sum::<f64>() / n;
    let match_gain = match_gains.iter().sum::<f64>() / n;
    Ok(Valuation { common, match_gain })
}

/// One auction round's bids: the satellite contract price plus the ground
/// BS bids in operator order.
#[derive(Debug, Clone, PartialEq)]
pub struct BidProfile {
    pub satellite_contract: f64,
    pub ground_bids: Vec<f64>,
}

impl BidProfile {
    pub fn new(satellite_contract: f64, ground_bids: Vec<f64>) -> BidProfile {
        BidProfile { satellite_contract, ground_bids }
    }

    pub fn all_bids(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.satellite_contract).chain(self.ground_bids.iter().copied())
    }

    /// Highest and second-highest bids over the whole profile.
    pub fn top_two(&self) -> (f64, f64) {
        let mut first = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        for bid in self.all_bids() {
            if bid > first {
                second = first;
                first = bid;
            } else if bid > second {
                second = bid;
            }
        }
        (first, second)
    }

    /// Best bid excluding ground bidder `n` (the satellite always competes).
    pub fn best_competing(&self, n: usize) -> f64 {
        self.ground_bids
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != n)
            .map(|(_, &b)| b)
            .fold(self.satellite_contract, f64::max)
    }
}

/// Who serves the agent this round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Winner {
    Satellite,
    /// Index into `ground_bids` (operator id minus one).
    Ground(usize),
}

/// Allocation and payment of one round: the winner's indicator is one,
/// everyone else's is zero, and losers pay nothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismOutcome {
    pub winner: Winner,
    pub payment: f64,
    pub rho_used: f64,
}

impl MechanismOutcome {
    pub fn payment_of(&self, winner: Winner) -> f64 {
        if self.winner == winner {
            self.payment
        } else {
            0.0
        }
    }
}

/// Scaled second-bid allocation: ground bidder `n` wins iff
/// `x_n > rho * max(x_{-n})` and pays that threshold; with no ground winner
/// the satellite retains the service at its contract price.
pub fn msb(bids: &BidProfile, rho: f64) -> MechanismOutcome {
    assert!(rho >= 1.0, "price scaling factor must be at least 1");
    for (n, &bid) in bids.ground_bids.iter().enumerate() {
        let threshold = rho * bids.best_competing(n);
        if bid > threshold {
            return MechanismOutcome { winner: Winner::Ground(n), payment: threshold, rho_used: rho };
        }
    }
    MechanismOutcome {
        winner: Winner::Satellite,
        payment: bids.satellite_contract,
        rho_used: rho,
    }
}

/// Second-price auction over the full profile: the highest bidder wins
/// (ties to the lowest operator id) and pays the second-highest bid; the
/// satellite, when it wins, retains the service at its posted price.
pub fn spa(bids: &BidProfile) -> Result<MechanismOutcome, MarketError> {
    if bids.ground_bids.is_empty() {
        return Err(MarketError::TooFewBids);
    }
    let mut winner = Winner::Satellite;
    let mut best = bids.satellite_contract;
    for (n, &bid) in bids.ground_bids.iter().enumerate() {
        if bid > best {
            best = bid;
            winner = Winner::Ground(n);
        }
    }
    let payment = match winner {
        Winner::Satellite => bids.satellite_contract,
        Winner::Ground(n) => bids.best_competing(n),
    };
    Ok(MechanismOutcome { winner, payment, rho_used: 1.0 })
}

/// Current-round scaling baseline: `max(1, x_0 / x_(2))`.
pub fn myopic_rho(bids: &BidProfile) -> f64 {
    let (_, second) = bids.top_two();
    if second > 0.0 {
        (bids.satellite_contract / second).max(1.0)
    } else {
        1.0
    }
}

/// Historical scaling baseline: `max(1, E[x_0] / E[x_(2)])` over a profile
/// history, with empirical means.
pub fn optimal_rho(history: &[BidProfile]) -> f64 {
    if history.is_empty() {
        return 1.0;
    }
    let n = history.len() as f64;
    let mean_contract = history.iter().map(|p| p.satellite_contract).sum::<f64>() / n;
    let mean_second = history.iter().map(|p| p.top_two().1).sum::<f64>() / n;
    if mean_second > 0.0 {
        (mean_contract / mean_second).max(1.0)
    } else {
        1.0
    }
}

/// Profit-maximizing satellite contract price against sampled top ground
/// valuations: grid over the samples of the empirical
/// `E[(v_0 - x) * 1(v_(1) <= x)]`, ties to the lowest price.
pub fn contract_price(v0: f64, top_ground_samples: &[f64]) -> Result<f64, MarketError> {
    if top_ground_samples.is_empty() {
        return Err(MarketError::NoSamples);
    }
    let mut candidates = top_ground_samples.to_vec();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();
    let n = top_ground_samples.len() as f64;
    let mut best_price = candidates[0];
    let mut best_profit = f64::NEG_INFINITY;
    for &x in &candidates {
        let hits = top_ground_samples.iter().filter(|&&v| v <= x).count() as f64;
        let profit = (v0 - x) * hits / n;
        if profit > best_profit {
            best_profit = profit;
            best_price = x;
        }
    }
    Ok(best_price)
}

/// Critical payment a ground bidder must clear: `rho * max(competing)`.
/// Homogeneous of degree one in the competing bids.
pub fn critical_payment(competing_bids: &[f64], rho: f64) -> Result<f64, MarketError> {
    assert!(rho >= 1.0, "price scaling factor must be at least 1");
    if competing_bids.is_empty() {
        return Err(MarketError::NoCompetitors);
    }
    Ok(rho * competing_bids.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn profile(x0: f64, ground: &[f64]) -> BidProfile {
        BidProfile::new(x0, ground.to_vec())
    }

    #[test]
    fn valuation_of_constant_trace() {
        let slot = CostBreakdown { compute: 2.0, accuracy: 0.5, cloud: 1.0, ..Default::default() };
        let v = valuation_from_trace(&[slot; 4], &[3.0; 4]).unwrap();
        assert_relative_eq!(v.common, 3.0, max_relative = 1e-15);
        assert_relative_eq!(v.match_gain, 3.0, max_relative = 1e-15);
        assert_relative_eq!(v.value(), 9.0, max_relative = 1e-15);
    }

    #[test]
    fn valuation_zero_context_zero_value() {
        let slot = CostBreakdown { compute: 2.0, ..Default::default() };
        let v = valuation_from_trace(&[slot; 3], &[0.0; 3]).unwrap();
        assert_eq!(v.match_gain, 0.0);
        assert_eq!(v.value(), 0.0);
    }

    #[test]
    fn valuation_matches_reaverage_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let costs: Vec<CostBreakdown> = (0..100)
            .map(|_| CostBreakdown {
                switching: rng.gen::<f64>(),
                transmission: rng.gen::<f64>(),
                compute: rng.gen::<f64>(),
                accuracy: rng.gen::<f64>(),
                cloud: rng.gen::<f64>(),
            })
            .collect();
        let gains: Vec<f64> = (0..100).map(|_| rng.gen::<f64>() * 5.0).collect();
        let v = valuation_from_trace(&costs, &gains).unwrap();
        // Independent accumulation in reverse order.
        let mut c = 0.0;
        let mut g = 0.0;
        for i in (0..100).rev() {
            c += costs[i].switching + costs[i].transmission + costs[i].compute + costs[i].cloud;
            g += gains[i];
        }
        assert_relative_eq!(v.common, c / 100.0, max_relative = 1e-12);
        assert_relative_eq!(v.match_gain, g / 100.0, max_relative = 1e-12);
    }

    #[test]
    fn valuation_rejects_empty_or_mismatched() {
        assert_eq!(valuation_from_trace(&[], &[]), Err(MarketError::BadTrace));
        let slot = CostBreakdown::default();
        assert_eq!(valuation_from_trace(&[slot], &[1.0, 2.0]), Err(MarketError::BadTrace));
    }

    #[test]
    fn msb_scaled_win_and_payment() {
        let out = msb(&profile(1.0, &[10.0, 4.0, 3.0]), 2.0);
        assert_eq!(out.winner, Winner::Ground(0));
        assert_relative_eq!(out.payment, 8.0, max_relative = 1e-15);
    }

    #[test]
    fn msb_satellite_fallback() {
        let out = msb(&profile(1.0, &[5.0, 4.0]), 2.0);
        assert_eq!(out.winner, Winner::Satellite);
        assert_eq!(out.payment, 1.0);
    }

    #[test]
    fn msb_at_rho_one_equals_spa_on_distinct_bids() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let n = rng.gen_range(2..6);
            let mut bids: Vec<f64> = (0..=n).map(|_| rng.gen_range(0.01..100.0)).collect();
            bids.sort_by(|a, b| a.partial_cmp(b).unwrap());
            bids.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
            if bids.len() < 3 {
                continue;
            }
            let x0 = bids.remove(rng.gen_range(0..bids.len()));
            let p = BidProfile::new(x0, bids);
            assert_eq!(msb(&p, 1.0), spa(&p).unwrap());
        }
    }

    #[test]
    fn spa_definition_and_ties() {
        let out = spa(&profile(0.5, &[10.0, 4.0, 3.0])).unwrap();
        assert_eq!(out.winner, Winner::Ground(0));
        assert_eq!(out.payment, 4.0);

        // All-equal bids: lowest operator id wins and pays the common bid.
        let tie = spa(&profile(7.0, &[7.0, 7.0])).unwrap();
        assert_eq!(tie.winner, Winner::Satellite);
        assert_eq!(tie.payment, 7.0);
        let tie_ground = spa(&profile(1.0, &[7.0, 7.0])).unwrap();
        assert_eq!(tie_ground.winner, Winner::Ground(0));
        assert_eq!(tie_ground.payment, 7.0);
    }

    #[test]
    fn spa_needs_two_bids() {
        assert_eq!(spa(&BidProfile::new(1.0, vec![])), Err(MarketError::TooFewBids));
    }

    #[test]
    fn spa_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let n = rng.gen_range(1..7);
            let p = BidProfile::new(
                rng.gen_range(0.0..50.0),
                (0..n).map(|_| rng.gen_range(0.0..50.0)).collect(),
            );
            let out = spa(&p).unwrap();
            // Sort-based oracle over (bid, operator index).
            let mut indexed: Vec<(f64, usize)> =
                p.all_bids().enumerate().map(|(i, b)| (b, i)).collect();
            indexed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let winner = if indexed[0].1 == 0 {
                Winner::Satellite
            } else {
                Winner::Ground(indexed[0].1 - 1)
            };
            assert_eq!(out.winner, winner);
            if winner != Winner::Satellite {
                assert_relative_eq!(out.payment, indexed[1].0, max_relative = 1e-15);
            }
        }
    }

    #[test]
    fn myopic_rho_ratio_and_clamp() {
        assert_eq!(myopic_rho(&profile(8.0, &[10.0, 4.0])), 2.0);
        assert_eq!(myopic_rho(&profile(2.0, &[10.0, 4.0])), 1.0);
        assert_eq!(myopic_rho(&profile(0.0, &[0.0])), 1.0);
    }

    #[test]
    fn optimal_rho_uses_history_means() {
        let history: Vec<BidProfile> = (0..10)
            .map(|i| profile(6.0 + i as f64, &[10.0, 2.0 + i as f64]))
            .collect();
        // Independent mean computation.
        let mean_x0: f64 = history.iter().map(|p| p.satellite_contract).sum::<f64>() / 10.0;
        let mean_second: f64 = history.iter().map(|p| p.top_two().1).sum::<f64>() / 10.0;
        assert_relative_eq!(
            optimal_rho(&history),
            (mean_x0 / mean_second).max(1.0),
            max_relative = 1e-15
        );
    }

    #[test]
    fn contract_price_single_sample() {
        assert_eq!(contract_price(5.0, &[2.0]).unwrap(), 2.0);
    }

    #[test]
    fn contract_price_all_samples_above_value() {
        assert_eq!(contract_price(1.0, &[4.0, 2.0, 9.0]).unwrap(), 2.0);
    }

    #[test]
    fn contract_price_exhaustive_grid() {
        // Candidates 2, 4, 6 against v0 = 5: profits 1, 2/3, -1.
        assert_eq!(contract_price(5.0, &[2.0, 4.0, 6.0]).unwrap(), 2.0);
        // Shift value up so the middle candidate wins: profits for
        // v0 = 7: (7-2)/3 = 1.67, (7-4)*2/3 = 2, (7-6)*1 = 1.
        assert_eq!(contract_price(7.0, &[2.0, 4.0, 6.0]).unwrap(), 4.0);
    }

    #[test]
    fn critical_payment_scaling() {
        assert_eq!(critical_payment(&[4.0, 1.0], 2.0).unwrap(), 8.0);
        let base = critical_payment(&[3.0, 7.0, 2.0], 1.5).unwrap();
        let scaled = critical_payment(&[30.0, 70.0, 20.0], 1.5).unwrap();
        assert_relative_eq!(scaled, 10.0 * base, max_relative = 1e-12);
        assert_eq!(critical_payment(&[], 2.0), Err(MarketError::NoCompetitors));
    }

    #[test]
    fn critical_payment_matches_max_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..500 {
            let n = rng.gen_range(1..8);
            let bids: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..100.0)).collect();
            let rho = rng.gen_range(1.0..5.0);
            let mut max = f64::NEG_INFINITY;
            for &b in &bids {
                if b > max {
                    max = b;
                }
            }
            assert_relative_eq!(
                critical_payment(&bids, rho).unwrap(),
                rho * max,
                max_relative = 1e-15
            );
        }
    }

    #[test]
    fn exactly_one_winner_and_losers_pay_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..500 {
            let n = rng.gen_range(1..6);
            let p = BidProfile::new(
                rng.gen_range(0.1..20.0),
                (0..n).map(|_| rng.gen_range(0.1..20.0)).collect(),
            );
            let rho = rng.gen_range(1.0..4.0);
            let out = msb(&p, rho);
            // Winner is unique by construction; check loser payments.
            for g in 0..n {
                if out.winner != Winner::Ground(g) {
                    assert_eq!(out.payment_of(Winner::Ground(g)), 0.0);
                }
            }
            if out.winner != Winner::Satellite {
                assert_eq!(out.payment_of(Winner::Satellite), 0.0);
                // Individual rationality: the threshold is strictly below
                // the winning bid.
                let Winner::Ground(w) = out.winner else { unreachable!() };
                assert!(out.payment < p.ground_bids[w]);
            }
        }
    }

    #[test]
    fn profile_scaling_preserves_winner_and_scales_payment() {
        let p = profile(1.0, &[10.0, 4.0, 3.0]);
        let base = msb(&p, 2.0);
        let scaled_profile = BidProfile::new(10.0, vec![100.0, 40.0, 30.0]);
        let scaled = msb(&scaled_profile, 2.0);
        assert_eq!(base.winner, scaled.winner);
        assert_relative_eq!(scaled.payment, 10.0 * base.payment, max_relative = 1e-12);
        assert_relative_eq!(scaled.payment, 80.0, max_relative = 1e-12);
    }

    #[test]
    fn duplicate_identity_changes_outcome() {
        // A witness that the mechanism is not false-name-proof: adding a
        // duplicate identity bidding between the winner's threshold
        // competitors flips the allocation to the satellite.
        let rho = 2.0;
        let original = profile(1.0, &[10.0, 4.0]);
        let with_shill = profile(1.0, &[10.0, 4.0, 6.0]);
        let before = msb(&original, rho);
        let after = msb(&with_shill, rho);
        assert_eq!(before.winner, Winner::Ground(0));
        assert_eq!(after.winner, Winner::Satellite);
        assert_ne!(before.winner, after.winner);

        // A milder alteration changes the payment while keeping the winner.
        let with_nudge = profile(1.0, &[10.0, 4.0, 4.5]);
        let nudged = msb(&with_nudge, rho);
        assert_eq!(nudged.winner, Winner::Ground(0));
        assert_ne!(nudged.payment, before.payment);
    }
}

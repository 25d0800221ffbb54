//! Chain-of-thought dynamics and analytics.
//!
//! Tracks, per cached (service, model) pair, the accumulated context tokens K
//! and their age-of-thought score kappa, and provides the closed-form accuracy
//! and ambiguity quantities built on them. The exact finite-model posterior
//! oracle lives in [`crate::oracle`].

use thiserror::Error;

use crate::domain::DecayMode;

/// Cap on `ln(1/beta)` so costs stay finite as beta approaches zero.
pub const LOG_CAP: f64 = 50.0;

#[derive(Debug, Error, PartialEq)]
pub enum CotError {
    #[error("proportional decay requires vanish in [0, 1], got {0}")]
    VanishOutOfRange(f64),
    #[error("vanish must be >= 0, got {0}")]
    NegativeVanish(f64),
    #[error("ambiguity {0} must be in [0, 1)")]
    AmbiguityOutOfRange(f64),
    #[error("no length below {0} satisfies the ambiguity target")]
    ThresholdNotFound(u64),
}

/// Context carried by one cached (service, model) pair.
///
/// Both fields are exactly zero whenever the pair is uncached. Tokens may be
/// fractional under partial offloading.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContextState {
    pub tokens: f64,
    pub aot: f64,
}

impl ContextState {
    pub const ZERO: ContextState = ContextState { tokens: 0.0, aot: 0.0 };
}

/// Tokens appended to the context this slot:
/// `delta = a * (1 - b) * R * k_i`, with `b` the cloud share of the batch.
pub fn delta_tokens(cached: bool, cloud_share: f64, requests: u64, example_tokens: u64) -> f64 {
    if !cached {
        return 0.0;
    }
    (1.0 - cloud_share) * requests as f64 * example_tokens as f64
}

/// Context token recursion: `K = a * (K_prev + delta)`; eviction resets to 0.
pub fn update_tokens(prev: &ContextState, cached: bool, delta: f64) -> f64 {
    if cached {
        prev.tokens + delta
    } else {
        0.0
    }
}

/// AoT recursion under the configured vanishing mode.
///
/// Subtractive applies the literal token-count decrement
/// `a * max(kappa + delta - vanish, 0)`; proportional scales the carried
/// context, `a * max((1 - vanish) * kappa + delta, 0)`.
pub fn update_aot(
    prev: &ContextState,
    cached: bool,
    delta: f64,
    vanish: f64,
    mode: DecayMode,
) -> Result<f64, CotError> {
    if vanish < 0.0 {
        return Err(CotError::NegativeVanish(vanish));
    }
    if mode == DecayMode::Proportional && vanish > 1.0 {
        return Err(CotError::VanishOutOfRange(vanish));
    }
    if !cached {
        return Ok(0.0);
    }
    let next = match mode {
        DecayMode::Subtractive => prev.aot + delta - vanish,
        DecayMode::Proportional => (1.0 - vanish) * prev.aot + delta,
    };
    Ok(next.max(0.0))
}

/// `ln(1/beta)`, capped so a vanishing beta cannot blow up costs.
pub fn log_gain(beta: f64) -> f64 {
    if beta <= 0.0 {
        return LOG_CAP;
    }
    (1.0 / beta).ln().min(LOG_CAP)
}

/// Few-shot reasoning performance `A = alpha * kappa * ln(1/beta)`.
///
/// Natural log throughout; the value is reported raw and may exceed one for
/// large kappa.
pub fn accuracy(alpha: f64, beta: f64, kappa: f64) -> f64 {
    alpha * kappa * log_gain(beta)
}

/// Unit accuracy cost `(1 - alpha) / (max(kappa, 1) * ln(1/beta))`.
///
/// Kappa is floored at one to avoid the empty-context singularity; a perfect
/// model (alpha = 1) costs nothing.
pub fn unit_accuracy_cost(alpha: f64, beta: f64, kappa: f64) -> f64 {
    (1.0 - alpha) / (kappa.max(1.0) * log_gain(beta))
}

/// Posterior-gap bound `eta * prod eps_y / (1 - eps_y)` with
/// `eta = 2 * eps_d0 / (1 - eps_d0)`.
pub fn ambiguity_bound(eps_d0: f64, eps_examples: &[f64]) -> Result<f64, CotError> {
    for &eps in std::iter::once(&eps_d0).chain(eps_examples) {
        if !(0.0..1.0).contains(&eps) {
            return Err(CotError::AmbiguityOutOfRange(eps));
        }
    }
    let eta = 2.0 * eps_d0 / (1.0 - eps_d0);
    let product: f64 = eps_examples.iter().map(|&e| e / (1.0 - e)).product();
    Ok(eta * product)
}

/// Smallest example length whose ambiguity falls to at most `sigma`.
///
/// `eps_of_length` must be nonincreasing with limit zero; the search doubles
/// up to `cap` and then bisects.
pub fn length_threshold(
    eps_of_length: impl Fn(u64) -> f64,
    sigma: f64,
    cap: u64,
) -> Result<u64, CotError> {
    if eps_of_length(1) <= sigma {
        return Ok(1);
    }
    let mut hi = 1u64;
    loop {
        hi = hi.saturating_mul(2);
        if hi > cap {
            return Err(CotError::ThresholdNotFound(cap));
        }
        if eps_of_length(hi) <= sigma {
            break;
        }
    }
    let mut lo = hi / 2; // eps(lo) > sigma
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if eps_of_length(mid) <= sigma {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

//! Exact finite-model oracle for the in-context posterior-gap bound.
//!
//! A [`FiniteLatentModel`] is a fully enumerable generative model: a context
//! is drawn from a prior, each message draws an intention given the context,
//! and message tokens are emitted i.i.d. given the intention. Because every
//! distribution is finite, the predictive distribution conditioned on
//! examples, the conditional given the true context, and each example's
//! ambiguity are all computable exactly, which makes the gap bound checkable
//! with no sampling error.

use thiserror::Error;

/// Enumeration budget: refuse instances whose latent joint exceeds this.
pub const MAX_ENUMERATION_TERMS: f64 = 1e7;

/// Tolerance for distribution normalization checks.
pub const NORMALIZATION_TOL: f64 = 1e-12;

pub type Message = Vec<usize>;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("distribution `{0}` does not normalize to 1")]
    NotNormalized(&'static str),
    #[error("model dimensions are inconsistent or empty")]
    BadShape,
    #[error("context prior must be strictly positive")]
    ZeroPrior,
    #[error("token {0} outside the alphabet")]
    UnknownToken(usize),
    #[error("intention {0} out of range")]
    UnknownIntention(usize),
    #[error("conditioning event has probability zero")]
    ZeroProbability,
    #[error("instance needs {0:.0} enumeration terms, over the {1:.0} cap")]
    TooLarge(f64, f64),
    #[error("model table line {0}: {1}")]
    BadTable(usize, String),
}

/// Finite generative model with designated true context and intention.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteLatentModel {
    /// q(c), strictly positive.
    pub context_prior: Vec<f64>,
    /// q(theta | c), indexed [context][intention].
    pub intention_given_context: Vec<Vec<f64>>,
    /// q(token | theta), indexed [intention][token].
    pub emission: Vec<Vec<f64>>,
    pub true_context: usize,
    pub true_intention: usize,
}

impl FiniteLatentModel {
    pub fn contexts(&self) -> usize {
        self.context_prior.len()
    }

    pub fn intentions(&self) -> usize {
        self.emission.len()
    }

    pub fn alphabet(&self) -> usize {
        self.emission.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if self.context_prior.is_empty()
            || self.emission.is_empty()
            || self.alphabet() == 0
            || self.intention_given_context.len() != self.contexts()
            || self.true_context >= self.contexts()
            || self.true_intention >= self.intentions()
        {
            return Err(OracleError::BadShape);
        }
        let close = |sum: f64| (sum - 1.0).abs() <= NORMALIZATION_TOL;
        if !close(self.context_prior.iter().sum()) {
            return Err(OracleError::NotNormalized("context prior"));
        }
        if self.context_prior.iter().any(|&p| p <= 0.0) {
            return Err(OracleError::ZeroPrior);
        }
        for row in &self.intention_given_context {
            if row.len() != self.intentions() {
                return Err(OracleError::BadShape);
            }
            if !close(row.iter().sum()) {
                return Err(OracleError::NotNormalized("intention conditional"));
            }
        }
        for row in &self.emission {
            if row.len() != self.alphabet() {
                return Err(OracleError::BadShape);
            }
            if !close(row.iter().sum()) {
                return Err(OracleError::NotNormalized("emission"));
            }
        }
        Ok(())
    }

    /// Uniform context prior (the default working assumption).
    pub fn has_uniform_prior(&self) -> bool {
        let p0 = self.context_prior[0];
        self.context_prior
            .iter()
            .all(|&p| (p - p0).abs() <= NORMALIZATION_TOL)
    }

    /// Prior skewness of the true context: `max_c q(c*) / q(c)`; 1 under a
    /// uniform prior.
    pub fn skewness(&self) -> f64 {
        let p_star = self.context_prior[self.true_context];
        self.context_prior
            .iter()
            .map(|&p| p_star / p)
            .fold(f64::MIN, f64::max)
    }

    /// P(message | theta): i.i.d. token emissions.
    pub fn message_prob_given_intention(
        &self,
        msg: &Message,
        theta: usize,
    ) -> Result<f64, OracleError> {
        let row = self
            .emission
            .get(theta)
            .ok_or(OracleError::UnknownIntention(theta))?;
        let mut p = 1.0;
        for &token in msg {
            p *= row.get(token).ok_or(OracleError::UnknownToken(token))?;
        }
        Ok(p)
    }

    /// P(message | c) marginalized over the intention.
    pub fn message_prob_given_context(&self, msg: &Message, c: usize) -> Result<f64, OracleError> {
        let mut p = 0.0;
        for (theta, &w) in self.intention_given_context[c].iter().enumerate() {
            p += w * self.message_prob_given_intention(msg, theta)?;
        }
        Ok(p)
    }

    /// Ambiguity of a message relative to a generating pair:
    /// one minus the posterior of `(c*, theta)` given the message.
    pub fn epsilon(&self, msg: &Message, theta: usize) -> Result<f64, OracleError> {
        let numer = self.context_prior[self.true_context]
            * self.intention_given_context[self.true_context][theta]
            * self.message_prob_given_intention(msg, theta)?;
        let mut denom = 0.0;
        for c in 0..self.contexts() {
            denom += self.context_prior[c] * self.message_prob_given_context(msg, c)?;
        }
        if denom <= 0.0 {
            return Err(OracleError::ZeroProbability);
        }
        Ok(1.0 - numer / denom)
    }
}

/// Everything the gap check produces for one (model, examples, task,
/// continuation) instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGapReport {
    /// |p_m(D | d0, E) - q(D | d0, c*)|.
    pub gap: f64,
    /// eta * prod eps_y / (1 - eps_y), with the skewness factor folded in.
    pub bound: f64,
    pub eta: f64,
    pub lambda: f64,
    pub upsilon: f64,
    pub eps_task: f64,
    pub eps_examples: Vec<f64>,
    pub skewness: f64,
    pub predictive: f64,
    pub conditional: f64,
}

impl PosteriorGapReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.gap <= self.bound + tol
    }
}

/// Compute the exact posterior gap and its bound for one instance.
///
/// `task_intention` is the intention that generated the task message; the
/// examples use the model's designated true intention. The continuation may
/// be any token sequence.
pub fn oracle_posterior_gap(
    model: &FiniteLatentModel,
    examples: &[Message],
    task: &Message,
    task_intention: usize,
    continuation: &[Message],
) -> Result<PosteriorGapReport, OracleError> {
    model.validate()?;
    if task_intention >= model.intentions() {
        return Err(OracleError::UnknownIntention(task_intention));
    }
    let messages = examples.len() + 1 + continuation.len();
    let terms = model.contexts() as f64 * (model.intentions() as f64).powi(messages as i32);
    if terms > MAX_ENUMERATION_TERMS {
        return Err(OracleError::TooLarge(terms, MAX_ENUMERATION_TERMS));
    }

    let c_star = model.true_context;
    let n_ctx = model.contexts();

    // Per-context likelihoods of the evidence blocks.
    let mut w_examples = vec![1.0f64; n_ctx];
    let mut p_task = vec![0.0f64; n_ctx];
    let mut w_cont = vec![1.0f64; n_ctx];
    for c in 0..n_ctx {
        for e in examples {
            w_examples[c] *= model.message_prob_given_context(e, c)?;
        }
        p_task[c] = model.message_prob_given_context(task, c)?;
        for d in continuation {
            w_cont[c] *= model.message_prob_given_context(d, c)?;
        }
    }

    // p_m(D | d0, E) = q(D, E) / q(d0, E), marginalizing the context.
    let mut joint_full = 0.0;
    let mut joint_evidence = 0.0;
    for c in 0..n_ctx {
        let base = model.context_prior[c] * w_examples[c] * p_task[c];
        joint_evidence += base;
        joint_full += base * w_cont[c];
    }
    if joint_evidence <= 0.0 || p_task[c_star] <= 0.0 {
        return Err(OracleError::ZeroProbability);
    }
    let predictive = joint_full / joint_evidence;
    let conditional = w_cont[c_star];
    let gap = (predictive - conditional).abs();

    // Proof intermediates: off-context mass over the true-context evidence.
    let anchor = model.context_prior[c_star] * w_examples[c_star] * p_task[c_star];
    let mut lambda = 0.0;
    let mut upsilon = 0.0;
    for c in 0..n_ctx {
        if c == c_star {
            continue;
        }
        let base = model.context_prior[c] * w_examples[c] * p_task[c];
        lambda += base * w_cont[c] / anchor;
        upsilon += base / anchor;
    }

    let eps_task = model.epsilon(task, task_intention)?;
    let eps_examples = examples
        .iter()
        .map(|e| model.epsilon(e, model.true_intention))
        .collect::<Result<Vec<_>, _>>()?;
    if eps_task >= 1.0 || eps_examples.iter().any(|&e| e >= 1.0) {
        return Err(OracleError::ZeroProbability);
    }

    let skewness = model.skewness();
    let eta = 2.0 * skewness.powi(examples.len() as i32) * eps_task / (1.0 - eps_task);
    let bound = eta
        * eps_examples
            .iter()
            .map(|&e| e / (1.0 - e))
            .product::<f64>();

    Ok(PosteriorGapReport {
        gap,
        bound,
        eta,
        lambda,
        upsilon,
        eps_task,
        eps_examples,
        skewness,
        predictive,
        conditional,
    })
}

/// Load a model from a plain-text table.
///
/// One row per line: `prior <c> <p>`, `intention <c> <theta> <p>`,
/// `emission <theta> <token> <p>`, and a single `true <c> <theta>` row.
/// `#` starts a comment. Indices must be dense from zero.
pub fn parse_model_table(text: &str) -> Result<FiniteLatentModel, OracleError> {
    let mut prior: Vec<(usize, f64)> = Vec::new();
    let mut intents: Vec<(usize, usize, f64)> = Vec::new();
    let mut emits: Vec<(usize, usize, f64)> = Vec::new();
    let mut truth: Option<(usize, usize)> = None;

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
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: &str| OracleError::BadTable(line_no, msg.to_string());
        let index = |s: &str| -> Result<usize, OracleError> {
            s.parse::<usize>().map_err(|_| bad("expected an index"))
        };
        let prob = |s: &str| -> Result<f64, OracleError> {
            s.parse::<f64>().map_err(|_| bad("expected a probability"))
        };
        match fields.as_slice() {
            ["prior", c, p] => prior.push((index(c)?, prob(p)?)),
            ["intention", c, t, p] => intents.push((index(c)?, index(t)?, prob(p)?)),
            ["emission", t, s, p] => emits.push((index(t)?, index(s)?, prob(p)?)),
            ["true", c, t] => {
                if truth.replace((index(c)?, index(t)?)).is_some() {
                    return Err(bad("duplicate `true` row"));
                }
            }
            _ => return Err(bad("expected prior/intention/emission/true row")),
        }
    }

    let (true_context, true_intention) =
        truth.ok_or(OracleError::BadTable(0, "missing `true` row".into()))?;
    let n_ctx = prior.iter().map(|(c, _)| c + 1).max().unwrap_or(0);
    let n_int = emits.iter().map(|(t, _, _)| t + 1).max().unwrap_or(0);
    let n_tok = emits.iter().map(|(_, s, _)| s + 1).max().unwrap_or(0);

    let mut model = FiniteLatentModel {
        context_prior: vec![0.0; n_ctx],
        intention_given_context: vec![vec![0.0; n_int]; n_ctx],
        emission: vec![vec![0.0; n_tok]; n_int],
        true_context,
        true_intention,
    };
    for (c, p) in prior {
        model.context_prior[c] = p;
    }
    for (c, t, p) in intents {
        if c >= n_ctx || t >= n_int {
            return Err(OracleError::BadShape);
        }
        model.intention_given_context[c][t] = p;
    }
    for (t, s, p) in emits {
        model.emission[t][s] = p;
    }
    model.validate()?;
    Ok(model)
}

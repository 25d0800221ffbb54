//! From-scratch deep Q-network that picks the auction price scaling factor.
//!
//! The network is a plain ReLU MLP over the normalized sorted bid vector,
//! trained with exact backpropagation and SGD-with-momentum against a
//! periodically synced target copy. Everything is deterministic given the
//! seed: weight init, exploration, replay sampling, and therefore the whole
//! parameter trajectory.

use std::collections::VecDeque;

use rand::Rng;
use thiserror::Error;

use crate::market::{msb, BidProfile, Winner};

pub use crate::domain::TrainConfig;

#[derive(Debug, Error, PartialEq)]
pub enum RlError {
    #[error("action {0} outside the {1}-action space")]
    ActionOutOfRange(usize, usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(&'static str),
}

/// Fixed-length state encoding of a bid profile: the satellite contract
/// followed by the ground bids sorted descending, scaled by the profile
/// maximum and zero-padded. An all-zero profile encodes as all zeros.
pub fn encode_state(bids: &BidProfile, max_len: usize) -> Vec<f64> {
    let mut state = vec![0.0; max_len];
    let mut ground = bids.ground_bids.clone();
    ground.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let top = bids.all_bids().fold(0.0f64, f64::max);
    if top <= 0.0 {
        return state;
    }
    state[0] = bids.satellite_contract / top;
    for (i, bid) in ground.into_iter().take(max_len.saturating_sub(1)).enumerate() {
        state[i + 1] = bid / top;
    }
    state
}

/// Price scaling factor of an action index: `rho = 10^(a / |A|)`, so action
/// zero reproduces the plain second-price rule and every rho lies in [1, 10).
pub fn action_to_rho(action: usize, action_count: usize) -> Result<f64, RlError> {
    if action >= action_count {
        return Err(RlError::ActionOutOfRange(action, action_count));
    }
    Ok(10f64.powf(action as f64 / action_count as f64))
}

/// One replayable step of the auction MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// FIFO replay buffer with a hard capacity.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        ReplayBuffer { items: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn sample<'a>(&'a self, batch_size: usize, rng: &mut impl Rng) -> Vec<&'a Transition> {
        (0..batch_size)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect()
    }
}

/// ReLU MLP with linear output head.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    /// Input, hidden..., output widths.
    pub layer_sizes: Vec<usize>,
    /// Row-major weight matrices, one per connection: [out][in].
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl QNetwork {
    pub fn new(input: usize, hidden: &[usize], output: usize, rng: &mut impl Rng) -> QNetwork {
        let mut layer_sizes = vec![input];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(output);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (1.0 / fan_in as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        QNetwork { layer_sizes, weights, biases }
    }

    pub fn output_len(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn input_len(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Q-values for a state.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_cached(input).pop().unwrap()
    }

    /// Greedy action; ties go to the lowest index.
    pub fn argmax(&self, input: &[f64]) -> usize {
        let q = self.forward(input);
        let mut best = 0;
        for (i, &v) in q.iter().enumerate() {
            if v > q[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_q(&self, input: &[f64]) -> f64 {
        self.forward(input)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Post-activation values of every layer (index 0 is the input itself).
    fn forward_cached(&self, input: &[f64]) -> Vec<Vec<f64>> {
        debug_assert_eq!(input.len(), self.input_len());
        let depth = self.weights.len();
        let mut acts = Vec::with_capacity(depth + 1);
        acts.push(input.to_vec());
        for l in 0..depth {
            let (rows, cols) = (self.layer_sizes[l + 1], self.layer_sizes[l]);
            let prev = &acts[l];
            let mut out = vec![0.0; rows];
            for r in 0..rows {
                let row = &self.weights[l][r * cols..(r + 1) * cols];
                let mut acc = self.biases[l][r];
                for (w, x) in row.iter().zip(prev.iter()) {
                    acc += w * x;
                }
                // Hidden layers rectify; the head stays linear.
                out[r] = if l + 1 < depth { acc.max(0.0) } else { acc };
            }
            acts.push(out);
        }
        acts
    }
}

/// Per-parameter gradient accumulator, same shapes as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(net: &QNetwork) -> Gradients {
        Gradients {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// Bootstrap target `y = r + gamma * max_a' Q_target(s', a')`; terminal
/// transitions use the bare reward.
pub fn td_target(t: &Transition, target_net: &QNetwork, gamma: f64) -> f64 {
    if t.terminal || gamma == 0.0 {
        t.reward
    } else {
        t.reward + gamma * target_net.max_q(&t.next_state)
    }
}

/// Mean squared TD error of a batch: `(1/K) * sum (y_k - Q(s_k, a_k))^2`.
pub fn batch_loss(
    batch: &[&Transition],
    net: &QNetwork,
    target_net: &QNetwork,
    gamma: f64,
) -> Result<f64, RlError> {
    if batch.is_empty() {
        return Err(RlError::EmptyBatch);
    }
    let mut loss = 0.0;
    for t in batch {
        let q = net.forward(&t.state)[t.action];
        let y = td_target(t, target_net, gamma);
        loss += (y - q) * (y - q);
    }
    Ok(loss / batch.len() as f64)
}

/// Loss and its exact gradient with respect to the online parameters.
pub fn batch_gradients(
    batch: &[&Transition],
    net: &QNetwork,
    target_net: &QNetwork,
    gamma: f64,
) -> Result<(f64, Gradients), RlError> {
    if batch.is_empty() {
        return Err(RlError::EmptyBatch);
    }
    let depth = net.weights.len();
    let mut grads = Gradients::zeros_like(net);
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;

    for t in batch {
        let acts = net.forward_cached(&t.state);
        let q = acts[depth][t.action];
        let y = td_target(t, target_net, gamma);
        loss += (y - q) * (y - q) * scale;

        // dL/dq on the chosen head only.
        let mut delta = vec![0.0; net.output_len()];
        delta[t.action] = 2.0 * (q - y) * scale;

        for l in (0..depth).rev() {
            let (rows, cols) = (net.layer_sizes[l + 1], net.layer_sizes[l]);
            let prev = &acts[l];
            let mut prev_delta = vec![0.0; cols];
            for r in 0..rows {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                grads.biases[l][r] += d;
                let row_w = &net.weights[l][r * cols..(r + 1) * cols];
                let row_g = &mut grads.weights[l][r * cols..(r + 1) * cols];
                for c in 0..cols {
                    row_g[c] += d * prev[c];
                    prev_delta[c] += d * row_w[c];
                }
            }
            if l > 0 {
                // ReLU gate of the previous hidden layer.
                for c in 0..cols {
                    if acts[l][c] <= 0.0 {
                        prev_delta[c] = 0.0;
                    }
                }
            }
            delta = prev_delta;
        }
    }
    Ok((loss, grads))
}

/// SGD-with-momentum state.
#[derive(Debug, Clone, Default)]
pub struct SgdState {
    velocity_w: Vec<Vec<f64>>,
    velocity_b: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(net: &QNetwork) -> SgdState {
        SgdState {
            velocity_w: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            velocity_b: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn apply(&mut self, net: &mut QNetwork, grads: &Gradients, lr: f64, momentum: f64) {
        for l in 0..net.weights.len() {
            for i in 0..net.weights[l].len() {
                let v = momentum * self.velocity_w[l][i] - lr * grads.weights[l][i];
                self.velocity_w[l][i] = v;
                net.weights[l][i] += v;
            }
            for i in 0..net.biases[l].len() {
                let v = momentum * self.velocity_b[l][i] - lr * grads.biases[l][i];
                self.velocity_b[l][i] = v;
                net.biases[l][i] += v;
            }
        }
    }
}

/// Online network, target copy, optimizer, replay buffer, and counters.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub net: QNetwork,
    pub target: QNetwork,
    pub buffer: ReplayBuffer,
    pub cfg: TrainConfig,
    opt: SgdState,
    /// Gradient updates applied so far (drives target syncs).
    pub train_steps: u64,
    /// Environment interactions so far (drives the epsilon schedule).
    pub env_steps: u64,
}

/// What a train step did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainStepOutcome {
    Updated { loss: f64 },
    /// Buffer shorter than a batch; nothing changed.
    NeedMoreData,
}

impl DqnAgent {
    pub fn new(cfg: TrainConfig, state_len: usize, rng: &mut impl Rng) -> DqnAgent {
        let net = QNetwork::new(state_len, &cfg.hidden_sizes, cfg.action_count, rng);
        let target = net.clone();
        let opt = SgdState::new(&net);
        let buffer = ReplayBuffer::new(cfg.buffer_capacity);
        DqnAgent { net, target, buffer, cfg, opt, train_steps: 0, env_steps: 0 }
    }

    /// Linear exploration schedule on environment steps.
    pub fn epsilon(&self) -> f64 {
        let cfg = &self.cfg;
        if cfg.epsilon_decay_steps == 0 {
            return cfg.epsilon_end;
        }
        let frac = (self.env_steps as f64 / cfg.epsilon_decay_steps as f64).min(1.0);
        cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start)
    }

    /// Epsilon-greedy action for the current schedule position.
    pub fn select_action(&self, state: &[f64], rng: &mut impl Rng) -> usize {
        if rng.gen::<f64>() < self.epsilon() {
            rng.gen_range(0..self.cfg.action_count)
        } else {
            self.net.argmax(state)
        }
    }

    /// One SGD update on a sampled batch, plus the periodic exact copy of
    /// the online parameters into the target network.
    pub fn train_step(&mut self, rng: &mut impl Rng) -> TrainStepOutcome {
        if self.buffer.len() < self.cfg.batch_size {
            return TrainStepOutcome::NeedMoreData;
        }
        let batch = self.buffer.sample(self.cfg.batch_size, rng);
        let (loss, grads) =
            batch_gradients(&batch, &self.net, &self.target, self.cfg.gamma).expect("batch >= 1");
        self.opt
            .apply(&mut self.net, &grads, self.cfg.learning_rate, self.cfg.momentum);
        self.train_steps += 1;
        if self.train_steps % self.cfg.target_sync_period == 0 {
            self.target = self.net.clone();
        }
        TrainStepOutcome::Updated { loss }
    }
}

/// One auction round offered to the agent: the posted bids and the bidders'
/// realized valuations (satellite first).
#[derive(Debug, Clone, PartialEq)]
pub struct MarketRound {
    pub bids: BidProfile,
    pub satellite_value: f64,
    pub ground_values: Vec<f64>,
}

impl MarketRound {
    /// Realized total surplus of an allocation: the winner's true value.
    pub fn surplus(&self, winner: Winner) -> f64 {
        match winner {
            Winner::Satellite => self.satellite_value,
            Winner::Ground(n) => self.ground_values[n],
        }
    }
}

/// Source of auction rounds for training and evaluation.
pub trait MarketEnv {
    fn next_round(&mut self) -> MarketRound;

    /// Normalizer applied to rewards during training (raw surplus is still
    /// reported). Defaults to no scaling.
    fn reward_scale(&self) -> f64 {
        1.0
    }
}

/// Per-episode training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    pub total_surplus: f64,
    pub mean_reward: f64,
    pub mean_loss: f64,
    pub epsilon_end: f64,
    /// How often each action (rho level) was taken.
    pub action_counts: Vec<u64>,
}

/// Run one training episode: observe bids, pick rho epsilon-greedily, clear
/// the auction, collect the realized surplus as reward, store the
/// transition, and take a gradient step.
pub fn run_dqmsb_episode(
    agent: &mut DqnAgent,
    env: &mut dyn MarketEnv,
    rng: &mut impl Rng,
) -> EpisodeStats {
    let state_len = agent.net.input_len();
    let iters = agent.cfg.iters_per_episode;
    let scale = env.reward_scale();
    let mut action_counts = vec![0u64; agent.cfg.action_count];
    let mut total_surplus = 0.0;
    let mut loss_sum = 0.0;
    let mut loss_count = 0u64;

    let mut round = env.next_round();
    let mut state = encode_state(&round.bids, state_len);
    for k in 0..iters {
        let action = agent.select_action(&state, rng);
        agent.env_steps += 1;
        action_counts[action] += 1;
        let rho = action_to_rho(action, agent.cfg.action_count).expect("action in range");
        let outcome = msb(&round.bids, rho);
        let surplus = round.surplus(outcome.winner);
        total_surplus += surplus;

        let next_round = env.next_round();
        let next_state = encode_state(&next_round.bids, state_len);
        agent.buffer.push(Transition {
            state: state.clone(),
            action,
            reward: surplus / scale,
            next_state: next_state.clone(),
            terminal: k + 1 == iters,
        });
        if let TrainStepOutcome::Updated { loss } = agent.train_step(rng) {
            loss_sum += loss;
            loss_count += 1;
        }
        round = next_round;
        state = next_state;
    }

    EpisodeStats {
        total_surplus,
        mean_reward: total_surplus / (scale * iters as f64),
        mean_loss: if loss_count > 0 { loss_sum / loss_count as f64 } else { 0.0 },
        epsilon_end: agent.epsilon(),
        action_counts,
    }
}

// --- Checkpoint format -----------------------------------------------------
//
// Byte-exact layout, little-endian:
//   magic   4 bytes  "SGQN"
//   version u32      1
//   layers  u32      number of layer sizes (input, hidden..., output)
//   sizes   u32 * layers
//   per connection l = 0..layers-2:
//     weights f64 * sizes[l+1] * sizes[l], row-major [out][in]
//     biases  f64 * sizes[l+1]

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGQN";
pub const CHECKPOINT_VERSION: u32 = 1;

impl QNetwork {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layer_sizes.len() as u32).to_le_bytes());
        for &s in &self.layer_sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for l in 0..self.weights.len() {
            for &w in &self.weights[l] {
                out.extend_from_slice(&w.to_le_bytes());
            }
            for &b in &self.biases[l] {
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<QNetwork, RlError> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], RlError> {
            let slice = bytes
                .get(*pos..*pos + n)
                .ok_or(RlError::BadCheckpoint("truncated"))?;
            *pos += n;
            Ok(slice)
        };
        if take(&mut pos, 4)? != CHECKPOINT_MAGIC {
            return Err(RlError::BadCheckpoint("bad magic"));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(RlError::BadCheckpoint("unsupported version"));
        }
        let layers = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        if layers < 2 {
            return Err(RlError::BadCheckpoint("needs at least two layers"));
        }
        let mut layer_sizes = Vec::with_capacity(layers);
        for _ in 0..layers {
            let s = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            if s == 0 {
                return Err(RlError::BadCheckpoint("zero-width layer"));
            }
            layer_sizes.push(s);
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut matrix = Vec::with_capacity(fan_in * fan_out);
            for _ in 0..fan_in * fan_out {
                matrix.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            }
            let mut bias = Vec::with_capacity(fan_out);
            for _ in 0..fan_out {
                bias.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            }
            weights.push(matrix);
            biases.push(bias);
        }
        if pos != bytes.len() {
            return Err(RlError::BadCheckpoint("trailing bytes"));
        }
        Ok(QNetwork { layer_sizes, weights, biases })
    }
}

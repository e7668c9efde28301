//! Deep deterministic policy gradient agent.
//!
//! The agent observes a 7-dimensional state, emits a flat action of
//! `3 * N_m * N_n` precoder entries bounded to `[-1, 1]` by the actor's
//! tanh head, and learns from a FIFO replay buffer with target networks
//! and soft updates. Exploration adds temporally correlated
//! Ornstein-Uhlenbeck noise to the deterministic policy output.

use std::collections::VecDeque;

use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::nn::{init_network, LayerSpec, Network, OptimizerConfig};
use crate::rng::derive_stream;

/// Dimension of the agent state.
pub const STATE_DIM: usize = 7;

/// Environment state fed to the agent, in documented field order:
/// `[snr_leg, snr_eve, CU, psnr_leg_prev, psnr_eve_prev, loss_prev, t/T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub snr_leg_db: f64,
    pub snr_eve_db: f64,
    pub cu: f64,
    pub psnr_leg_prev: f64,
    pub psnr_eve_prev: f64,
    pub loss_prev: f64,
    /// Relative training progress `t / T`.
    pub progress: f64,
}

/// Packs the state fields; `t` must lie in `[0, T]`.
pub fn build_state(
    snr_leg_db: f64,
    snr_eve_db: f64,
    cu: usize,
    psnr_leg_prev: f64,
    psnr_eve_prev: f64,
    loss_prev: f64,
    t: usize,
    total_steps: usize,
) -> Result<AgentState> {
    if t > total_steps {
        return Err(Error::Config(format!(
            "decision step {t} outside [0, {total_steps}]"
        )));
    }
    Ok(AgentState {
        snr_leg_db,
        snr_eve_db,
        cu: cu as f64,
        psnr_leg_prev,
        psnr_eve_prev,
        loss_prev,
        progress: t as f64 / total_steps as f64,
    })
}

impl AgentState {
    /// Feature scaling applied before the actor/critic: SNRs /20, CU /5,
    /// PSNRs /40, loss clipped to [0,1], progress raw.
    pub fn to_features(&self) -> [f64; STATE_DIM] {
        [
            self.snr_leg_db / 20.0,
            self.snr_eve_db / 20.0,
            self.cu / 5.0,
            self.psnr_leg_prev / 40.0,
            self.psnr_eve_prev / 40.0,
            self.loss_prev.clamp(0.0, 1.0),
            self.progress,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_features().iter().all(|v| v.is_finite())
    }
}

/// Flat precoder action in `[-1, 1]^(3*N_m*N_n)`.
pub type AgentAction = Vec<f64>;

/// One replay-buffer record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: AgentState,
    pub action: AgentAction,
    pub reward: f64,
    pub next_state: AgentState,
    pub done: bool,
}

/// Fixed-capacity FIFO replay buffer with uniform without-replacement
/// minibatch sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Oldest-first iteration, matching insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Appends a transition, evicting the oldest at capacity.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    /// Uniform sample of `batch` distinct transitions, or `None` when the
    /// buffer is not yet full enough (the caller skips the update).
    pub fn sample(&self, batch: usize, rng: &mut ChaCha12Rng) -> Option<Vec<&Transition>> {
        if self.items.len() < batch || batch == 0 {
            return None;
        }
        let idx = index_sample(rng, self.items.len(), batch);
        Some(idx.iter().map(|i| &self.items[i]).collect())
    }
}

/// Ornstein-Uhlenbeck exploration noise:
/// `x += theta * (0 - x) * dt + sigma * sqrt(dt) * N(0,1)`.
#[derive(Debug, Clone)]
pub struct OuProcess {
    pub state: Vec<f64>,
    pub theta: f64,
    pub sigma: f64,
    pub dt: f64,
}

impl OuProcess {
    pub fn new(dim: usize, theta: f64, sigma: f64, dt: f64) -> Self {
        OuProcess {
            state: vec![0.0; dim],
            theta,
            sigma,
            dt,
        }
    }

    pub fn reset(&mut self) {
        self.state.fill(0.0);
    }

    pub fn sample(&mut self, rng: &mut ChaCha12Rng) -> &[f64] {
        let sqrt_dt = self.dt.sqrt();
        for x in &mut self.state {
            let eps: f64 = rng.sample(StandardNormal);
            *x += self.theta * (0.0 - *x) * self.dt + self.sigma * sqrt_dt * eps;
        }
        &self.state
    }
}

/// `r = PSNR_leg - lambda_r * PSNR_eve`.
pub fn compute_reward(psnr_leg_db: f64, psnr_eve_db: f64, lambda_r: f64) -> f64 {
    psnr_leg_db - lambda_r * psnr_eve_db
}

/// Deterministic policy output with optional exploration noise, clipped
/// to `[-1, 1]`. `noise_scale` lets the trainer decay exploration.
pub fn select_action(
    actor: &mut Network,
    state: &AgentState,
    ou: &mut OuProcess,
    explore: bool,
    noise_scale: f64,
    rng: &mut ChaCha12Rng,
) -> Result<AgentAction> {
    let features = Mat::from_vec(1, STATE_DIM, state.to_features().to_vec());
    let out = actor.forward(&features)?;
    let mut action: Vec<f64> = out.data;
    if explore {
        let noise = ou.sample(rng);
        for (a, n) in action.iter_mut().zip(noise) {
            *a = (*a + noise_scale * n).clamp(-1.0, 1.0);
        }
    }
    Ok(action)
}

fn features_of(states: &[&AgentState]) -> Mat {
    let mut m = Mat::zeros(states.len(), STATE_DIM);
    for (i, s) in states.iter().enumerate() {
        m.row_mut(i).copy_from_slice(&s.to_features());
    }
    m
}

fn concat_state_action(features: &Mat, actions: &Mat) -> Mat {
    let mut m = Mat::zeros(features.rows, features.cols + actions.cols);
    for i in 0..features.rows {
        m.row_mut(i)[..features.cols].copy_from_slice(features.row(i));
        m.row_mut(i)[features.cols..].copy_from_slice(actions.row(i));
    }
    m
}

/// Temporal-difference targets `y = r + gamma * Q'(s', mu'(s')) * (1 - d)`.
/// Forward passes only; no parameters are modified.
pub fn td_targets(
    batch: &[&Transition],
    target_actor: &mut Network,
    target_critic: &mut Network,
    gamma: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Config("td_targets: empty batch".into()));
    }
    let next_states: Vec<&AgentState> = batch.iter().map(|t| &t.next_state).collect();
    let features = features_of(&next_states);
    let next_actions = target_actor.forward(&features)?;
    let q_next = target_critic.forward(&concat_state_action(&features, &next_actions))?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| t.reward + gamma * q_next.get(i, 0) * (1.0 - if t.done { 1.0 } else { 0.0 }))
        .collect())
}

/// One critic step minimizing the mean squared Bellman error
/// `(1/B) sum (y_i - Q(s_i, a_i))^2`. Returns the pre-step loss.
pub fn critic_update(
    critic: &mut Network,
    batch: &[&Transition],
    targets: &[f64],
    opt: &OptimizerConfig,
) -> Result<f64> {
    if batch.len() != targets.len() {
        return Err(Error::shape(
            format!("{} targets", batch.len()),
            format!("{} targets", targets.len()),
            "critic_update",
        ));
    }
    let states: Vec<&AgentState> = batch.iter().map(|t| &t.state).collect();
    let features = features_of(&states);
    let mut actions = Mat::zeros(batch.len(), batch[0].action.len());
    for (i, t) in batch.iter().enumerate() {
        actions.row_mut(i).copy_from_slice(&t.action);
    }
    critic.zero_grads();
    let q = critic.forward(&concat_state_action(&features, &actions))?;
    let b = batch.len() as f64;
    let loss = targets
        .iter()
        .enumerate()
        .map(|(i, y)| (y - q.get(i, 0)) * (y - q.get(i, 0)))
        .sum::<f64>()
        / b;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("critic loss is {loss}")));
    }
    let grad = Mat::from_fn(batch.len(), 1, |i, _| 2.0 * (q.get(i, 0) - targets[i]) / b);
    critic.backward(&grad)?;
    critic.optimizer_step(opt)?;
    Ok(loss)
}

/// One actor step minimizing `-(1/B) sum Q(s_i, mu(s_i))`. Gradients flow
/// through the critic into the actor; the critic's parameters are left
/// untouched and its scratch gradients cleared. Returns the pre-step loss.
pub fn actor_update(
    actor: &mut Network,
    critic: &mut Network,
    states: &[&AgentState],
    opt: &OptimizerConfig,
) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::Config("actor_update: empty batch".into()));
    }
    let features = features_of(states);
    actor.zero_grads();
    let actions = actor.forward(&features)?;
    let q = critic.forward(&concat_state_action(&features, &actions))?;
    let b = states.len() as f64;
    let loss = -q.data.iter().sum::<f64>() / b;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("actor loss is {loss}")));
    }
    let dq = Mat::from_fn(q.rows, 1, |_, _| -1.0 / b);
    let input_grad = critic.backward(&dq)?;
    // Keep only the action block of the critic's input gradient.
    let action_grad = Mat::from_fn(input_grad.rows, actions.cols, |i, j| {
        input_grad.get(i, STATE_DIM + j)
    });
    actor.backward(&action_grad)?;
    actor.optimizer_step(opt)?;
    // The critic accumulated scratch gradients; drop them so the next
    // critic update starts clean.
    critic.zero_grads();
    Ok(loss)
}

/// Soft target update `theta' <- tau * theta + (1 - tau) * theta'`.
pub fn soft_update(target: &mut Network, main: &Network, tau: f64) -> Result<()> {
    if target.params().len() != main.params().len() {
        return Err(Error::shape(
            format!("{} params", main.params().len()),
            format!("{} params", target.params().len()),
            "soft_update",
        ));
    }
    for (t, m) in target.params_mut().iter_mut().zip(main.params()) {
        *t = tau * m + (1.0 - tau) * *t;
    }
    Ok(())
}

/// Agent hyperparameters.
#[derive(Debug, Clone)]
pub struct DdpgConfig {
    pub action_dim: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub weight_decay: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Minimum stored transitions before updates begin.
    pub warmup: usize,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    pub ou_dt: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            action_dim: 48,
            actor_hidden: vec![256, 256],
            critic_hidden: vec![256, 256],
            gamma: 0.99,
            tau: 1e-3,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            weight_decay: 1e-4,
            buffer_capacity: 1000,
            batch_size: 128,
            warmup: 128,
            ou_theta: 0.15,
            ou_sigma: 0.2,
            ou_dt: 1.0,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0,1), got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must be in (0,1], got {}", self.tau)));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::Config(format!(
                "buffer capacity {} must be >= batch size {}",
                self.buffer_capacity, self.batch_size
            )));
        }
        Ok(())
    }

    fn actor_spec(&self) -> Vec<LayerSpec> {
        let mut spec = Vec::new();
        let mut prev = STATE_DIM;
        for &h in &self.actor_hidden {
            spec.push(LayerSpec::dense(prev, h));
            spec.push(LayerSpec::Relu);
            prev = h;
        }
        spec.push(LayerSpec::dense(prev, self.action_dim));
        spec.push(LayerSpec::Tanh);
        spec
    }

    fn critic_spec(&self) -> Vec<LayerSpec> {
        let mut spec = Vec::new();
        let mut prev = STATE_DIM + self.action_dim;
        for &h in &self.critic_hidden {
            spec.push(LayerSpec::dense(prev, h));
            spec.push(LayerSpec::Relu);
            prev = h;
        }
        spec.push(LayerSpec::dense(prev, 1));
        spec
    }
}

/// The full agent: networks, targets, buffer and exploration noise.
pub struct DdpgAgent {
    pub actor: Network,
    pub critic: Network,
    pub target_actor: Network,
    pub target_critic: Network,
    pub buffer: ReplayBuffer,
    pub ou: OuProcess,
    pub cfg: DdpgConfig,
    ou_rng: ChaCha12Rng,
    sample_rng: ChaCha12Rng,
}

impl DdpgAgent {
    pub fn new(cfg: DdpgConfig, master_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let actor = init_network(&cfg.actor_spec(), derive_seed_for(master_seed, "init/actor"))?;
        let critic = init_network(&cfg.critic_spec(), derive_seed_for(master_seed, "init/critic"))?;
        let target_actor = actor.clone();
        let target_critic = critic.clone();
        Ok(DdpgAgent {
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            ou: OuProcess::new(cfg.action_dim, cfg.ou_theta, cfg.ou_sigma, cfg.ou_dt),
            ou_rng: derive_stream(master_seed, "ou"),
            sample_rng: derive_stream(master_seed, "buffer-sampling"),
            actor,
            critic,
            target_actor,
            target_critic,
            cfg,
        })
    }

    /// Selects an action; `noise_scale` scales OU exploration (0 disables).
    pub fn act(&mut self, state: &AgentState, explore: bool, noise_scale: f64) -> Result<AgentAction> {
        select_action(
            &mut self.actor,
            state,
            &mut self.ou,
            explore,
            noise_scale,
            &mut self.ou_rng,
        )
    }

    pub fn observe(&mut self, transition: Transition) {
        self.buffer.push(transition);
    }

    /// One learning step: sample a minibatch, update critic then actor,
    /// soft-update both targets. Returns `None` while the buffer holds
    /// fewer than `warmup` transitions.
    pub fn update(&mut self) -> Result<Option<(f64, f64)>> {
        if self.buffer.len() < self.cfg.warmup {
            return Ok(None);
        }
        let batch = match self.buffer.sample(self.cfg.batch_size, &mut self.sample_rng) {
            Some(b) => b,
            None => return Ok(None),
        };
        let targets = td_targets(
            &batch,
            &mut self.target_actor,
            &mut self.target_critic,
            self.cfg.gamma,
        )?;
        let critic_opt =
            OptimizerConfig::adam(self.cfg.critic_lr).with_weight_decay(self.cfg.weight_decay);
        let actor_opt =
            OptimizerConfig::adam(self.cfg.actor_lr).with_weight_decay(self.cfg.weight_decay);
        let critic_loss = critic_update(&mut self.critic, &batch, &targets, &critic_opt)?;
        let states: Vec<&AgentState> = batch.iter().map(|t| &t.state).collect();
        let actor_loss = actor_update(&mut self.actor, &mut self.critic, &states, &actor_opt)?;
        soft_update(&mut self.target_actor, &self.actor, self.cfg.tau)?;
        soft_update(&mut self.target_critic, &self.critic, self.cfg.tau)?;
        Ok(Some((critic_loss, actor_loss)))
    }
}

fn derive_seed_for(master_seed: u64, name: &str) -> u64 {
    crate::rng::derive_seed(master_seed, name)
}

impl DdpgAgent {
    /// Writes the four networks into `dir` using the binary checkpoint
    /// format. Replay contents are transient and not persisted.
    pub fn save(&self, dir: impl AsRef<std::path::Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (name, net) in [
            ("actor", &self.actor),
            ("critic", &self.critic),
            ("target_actor", &self.target_actor),
            ("target_critic", &self.target_critic),
        ] {
            crate::checkpoint::save_network(net, dir.join(format!("{name}.net")))?;
        }
        Ok(())
    }

    /// Restores the four networks saved by [`DdpgAgent::save`] into a
    /// freshly constructed agent (buffer and noise state start empty).
    pub fn load(cfg: DdpgConfig, master_seed: u64, dir: impl AsRef<std::path::Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut agent = DdpgAgent::new(cfg, master_seed)?;
        agent.actor = crate::checkpoint::load_network(dir.join("actor.net"))?;
        agent.critic = crate::checkpoint::load_network(dir.join("critic.net"))?;
        agent.target_actor = crate::checkpoint::load_network(dir.join("target_actor.net"))?;
        agent.target_critic = crate::checkpoint::load_network(dir.join("target_critic.net"))?;
        Ok(agent)
    }
}

/// Outcome of the quadratic-reward toy environment run.
#[derive(Debug, Clone)]
pub struct ToyRunReport {
    /// First decision step at which the deterministic action came within
    /// `l_inf` 0.1 of the optimum, if any.
    pub converged_at: Option<usize>,
    pub final_inf_norm: f64,
    pub steps: usize,
}

/// Knobs for the toy run; separate from the paper-scale defaults because
/// the quadratic bandit gives the agent only 200 samples in a
/// 48-dimensional action space.
#[derive(Debug, Clone)]
pub struct ToyKnobs {
    pub actor_lr: f64,
    /// Actor updates per decision step.
    pub actor_updates: usize,
    /// Decision steps before the first critic fit / actor update.
    pub actor_delay: usize,
    /// Replay window (buffer capacity); the critic refits on the whole
    /// window every step.
    pub window: usize,
    pub ou_sigma: f64,
    /// Exploration scale decays linearly but never below this floor.
    pub noise_floor: f64,
    /// Ridge regularizer for the closed-form readout fit.
    pub ridge: f64,
    /// Basis slopes/offsets: per action dimension the frozen feature
    /// layer carries tanh(b*a + g), tanh(-b*a + g), tanh(b*a).
    pub basis_beta: f64,
    pub basis_gamma: f64,
}

impl Default for ToyKnobs {
    fn default() -> Self {
        ToyKnobs {
            actor_lr: 1e-4,
            actor_updates: 16,
            actor_delay: 25,
            window: 100,
            ou_sigma: 0.1,
            noise_floor: 0.3,
            ridge: 1e-6,
            basis_beta: 1.5,
            basis_gamma: 1.0,
        }
    }
}

/// Trains the agent on a stateless environment with reward
/// `r(a) = -||a - a*||^2` for a fixed target `a*` (drawn once from the
/// seed, inside `[-0.5, 0.5]^dim`), and reports when the deterministic
/// policy reaches the optimum.
pub fn run_toy_convergence(master_seed: u64, max_steps: usize) -> Result<ToyRunReport> {
    run_toy_convergence_with(master_seed, max_steps, &ToyKnobs::default())
}

/// [`run_toy_convergence`] with explicit knobs.
///
/// Two hundred reward samples cannot pin down a generic function of 48
/// action variables, so a free-form critic hands the actor near-random
/// off-support gradients no matter how it is trained. The toy critic
/// instead fixes its hidden layer to a quadratic-capable feature basis
/// (per action dimension: an even tanh pair plus an odd tanh unit) and
/// refits the readout in closed form on the replay window every step,
/// which minimizes the same Bellman regression the iterative critic
/// update descends. Exploration is white OU noise (theta = 1) with a
/// floor, and the actor trains through the standard deterministic policy
/// gradient against this critic.
pub fn run_toy_convergence_with(
    master_seed: u64,
    max_steps: usize,
    knobs: &ToyKnobs,
) -> Result<ToyRunReport> {
    let action_dim = 48;
    let basis = 3 * action_dim;
    let mut actor = init_network(
        &[
            LayerSpec::dense(STATE_DIM, 64),
            LayerSpec::Relu,
            LayerSpec::dense(64, 64),
            LayerSpec::Relu,
            LayerSpec::dense(64, action_dim),
            LayerSpec::Tanh,
        ],
        derive_seed_for(master_seed, "init/actor"),
    )?;
    let mut critic = init_network(
        &[
            LayerSpec::dense(STATE_DIM + action_dim, basis),
            LayerSpec::Tanh,
            LayerSpec::dense(basis, 1),
        ],
        derive_seed_for(master_seed, "init/critic"),
    )?;
    install_toy_basis(&mut critic, action_dim, knobs.basis_beta, knobs.basis_gamma);

    // White exploration noise: theta = 1 makes each OU step independent.
    let mut ou = OuProcess::new(action_dim, 1.0, knobs.ou_sigma, 1.0);
    let mut ou_rng = derive_stream(master_seed, "ou");
    let mut buffer = ReplayBuffer::new(knobs.window);

    let mut target_rng = derive_stream(master_seed, "toy-target");
    let a_star: Vec<f64> = (0..action_dim)
        .map(|_| target_rng.random_range(-0.5..0.5))
        .collect();

    // The environment is stateless; a fixed nominal state is fed throughout.
    let state = AgentState {
        snr_leg_db: 10.0,
        snr_eve_db: 10.0,
        cu: 1.0,
        psnr_leg_prev: 0.0,
        psnr_eve_prev: 0.0,
        loss_prev: 0.0,
        progress: 0.0,
    };
    let actor_opt = OptimizerConfig::adam(knobs.actor_lr);

    let mut converged_at = None;
    let mut final_inf_norm = f64::INFINITY;
    let mut steps_run = 0;
    for step in 1..=max_steps {
        steps_run = step;
        let noise_scale = (1.0 - step as f64 / max_steps as f64).max(knobs.noise_floor);
        let action = select_action(&mut actor, &state, &mut ou, true, noise_scale, &mut ou_rng)?;
        let reward = -action
            .iter()
            .zip(&a_star)
            .map(|(a, t)| (a - t) * (a - t))
            .sum::<f64>();
        buffer.push(Transition {
            state,
            action,
            reward,
            next_state: state,
            done: true,
        });

        if step > knobs.actor_delay && buffer.len() >= 32 {
            refit_toy_readout(&mut critic, &buffer, action_dim, basis, knobs.ridge)?;
            let states = [&state];
            for _ in 0..knobs.actor_updates {
                actor_update(&mut actor, &mut critic, &states, &actor_opt)?;
            }
        }

        let greedy = select_action(&mut actor, &state, &mut ou, false, 0.0, &mut ou_rng)?;
        final_inf_norm = greedy
            .iter()
            .zip(&a_star)
            .map(|(a, t)| (a - t).abs())
            .fold(0.0, f64::max);
        if final_inf_norm < 0.1 {
            converged_at = Some(step);
            break;
        }
    }
    Ok(ToyRunReport {
        converged_at,
        final_inf_norm,
        steps: steps_run,
    })
}

/// Hand-initializes the toy critic: zero state-feature weights, and per
/// action dimension `j` the hidden triple `tanh(b*a_j + g)`,
/// `tanh(-b*a_j + g)`, `tanh(b*a_j)` (an even pair plus an odd unit),
/// readout zeroed.
fn install_toy_basis(critic: &mut Network, action_dim: usize, beta: f64, gamma: f64) {
    let in_dim = STATE_DIM + action_dim;
    let basis = 3 * action_dim;
    let params = critic.params_mut();
    params.fill(0.0);
    for j in 0..action_dim {
        let row = STATE_DIM + j;
        params[row * basis + 3 * j] = beta;
        params[row * basis + 3 * j + 1] = -beta;
        params[row * basis + 3 * j + 2] = beta;
    }
    let bias_off = in_dim * basis;
    for j in 0..action_dim {
        params[bias_off + 3 * j] = gamma;
        params[bias_off + 3 * j + 1] = gamma;
    }
}

/// Closed-form ridge fit of the toy critic's readout layer on the whole
/// replay window. With every stored transition terminal, the TD targets
/// equal the rewards, so this solves the same mean-squared Bellman
/// regression the iterative critic update descends, exactly.
fn refit_toy_readout(
    critic: &mut Network,
    buffer: &ReplayBuffer,
    action_dim: usize,
    basis: usize,
    ridge: f64,
) -> Result<()> {
    let in_dim = STATE_DIM + action_dim;
    let n = buffer.len();

    // Hidden activations from the frozen first layer.
    let w1 = &critic.params()[..in_dim * basis];
    let b1 = &critic.params()[in_dim * basis..in_dim * basis + basis];
    let mut phi = Mat::zeros(n, basis + 1);
    let mut targets = Mat::zeros(n, 1);
    for (i, tr) in buffer.iter().enumerate() {
        let feats = tr.state.to_features();
        let mut z = b1.to_vec();
        for (k, zk) in z.iter_mut().enumerate() {
            for (f, &x) in feats.iter().enumerate() {
                *zk += x * w1[f * basis + k];
            }
            for (j, &a) in tr.action.iter().enumerate() {
                *zk += a * w1[(STATE_DIM + j) * basis + k];
            }
        }
        for (k, zk) in z.iter().enumerate() {
            phi.set(i, k, zk.tanh());
        }
        phi.set(i, basis, 1.0);
        targets.set(i, 0, tr.reward);
    }

    // Normal equations with a ridge term.
    let mut gram = Mat::zeros(basis + 1, basis + 1);
    crate::linalg::matmul_at_b_accum(&phi, &phi, &mut gram);
    for k in 0..=basis {
        gram.set(k, k, gram.get(k, k) + ridge);
    }
    let mut rhs = Mat::zeros(basis + 1, 1);
    crate::linalg::matmul_at_b_accum(&phi, &targets, &mut rhs);
    let beta_hat = crate::linalg::cholesky_solve(&gram, &rhs)?;

    let readout_off = in_dim * basis + basis;
    let params = critic.params_mut();
    for k in 0..basis {
        params[readout_off + k] = beta_hat.get(k, 0);
    }
    params[readout_off + basis] = beta_hat.get(basis, 0);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nominal_state() -> AgentState {
        build_state(10.0, 10.0, 1, 20.0, 8.0, 0.02, 50, 500).unwrap()
    }

    #[test]
    fn state_packing_and_progress() {
        let s0 = build_state(10.0, 10.0, 1, 0.0, 0.0, 0.0, 0, 500).unwrap();
        assert_eq!(s0.progress, 0.0);
        let s_t = build_state(10.0, 10.0, 1, 0.0, 0.0, 0.0, 500, 500).unwrap();
        assert_eq!(s_t.progress, 1.0);
        assert!(build_state(10.0, 10.0, 1, 0.0, 0.0, 0.0, 501, 500).is_err());

        // Field order of the feature vector.
        let s = nominal_state();
        let f = s.to_features();
        assert_eq!(f.len(), STATE_DIM);
        assert!((f[0] - 0.5).abs() < 1e-15); // snr_leg / 20
        assert!((f[2] - 0.2).abs() < 1e-15); // cu / 5
        assert!((f[3] - 0.5).abs() < 1e-15); // psnr_leg / 40
        assert!((f[5] - 0.02).abs() < 1e-15); // loss, inside [0,1]
        assert!((f[6] - 0.1).abs() < 1e-15); // progress
    }

    #[test]
    fn reward_formula() {
        assert!((compute_reward(20.92, 6.03, 1.0) - 14.89).abs() < 1e-12);
        assert_eq!(compute_reward(13.7, 13.7, 1.0), 0.0);
        assert_eq!(compute_reward(20.0, 5.0, 0.0), 20.0);
    }

    #[test]
    fn deterministic_action_without_noise() {
        let mut agent = DdpgAgent::new(DdpgConfig::default(), 1).unwrap();
        let s = nominal_state();
        let a1 = agent.act(&s, false, 0.0).unwrap();
        let a2 = agent.act(&s, false, 0.0).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(a1.len(), 48);
        assert!(a1.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn zeroed_actor_emits_zero_action() {
        let mut agent = DdpgAgent::new(DdpgConfig::default(), 2).unwrap();
        agent.actor.params_mut().fill(0.0);
        let a = agent.act(&nominal_state(), false, 0.0).unwrap();
        assert!(a.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn explored_actions_stay_bounded() {
        let mut agent = DdpgAgent::new(DdpgConfig::default(), 3).unwrap();
        let s = nominal_state();
        for _ in 0..200 {
            let a = agent.act(&s, true, 1.0).unwrap();
            assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn ou_stationary_std_matches_theory() {
        let mut ou = OuProcess::new(1, 0.15, 0.2, 1.0);
        let mut rng = derive_stream(4, "ou");
        // Burn in, then collect.
        for _ in 0..1000 {
            ou.sample(&mut rng);
        }
        let n = 100_000;
        let mut sq = 0.0;
        for _ in 0..n {
            let v = ou.sample(&mut rng)[0];
            sq += v * v;
        }
        let std = (sq / n as f64).sqrt();
        let theory = 0.2 / (2.0f64 * 0.15).sqrt();
        assert!(
            (std - theory).abs() / theory < 0.10,
            "std {std} vs theory {theory}"
        );
    }

    #[test]
    fn buffer_evicts_oldest() {
        let mut buf = ReplayBuffer::new(1000);
        let s = nominal_state();
        for i in 0..1001 {
            buf.push(Transition {
                state: s,
                action: vec![i as f64],
                reward: i as f64,
                next_state: s,
                done: false,
            });
        }
        assert_eq!(buf.len(), 1000);
        // Item 0 evicted; oldest is now 1.
        assert_eq!(buf.iter().next().unwrap().reward, 1.0);
        assert_eq!(buf.iter().last().unwrap().reward, 1000.0);
    }

    #[test]
    fn full_sample_is_a_permutation() {
        let mut buf = ReplayBuffer::new(16);
        let s = nominal_state();
        for i in 0..16 {
            buf.push(Transition {
                state: s,
                action: vec![],
                reward: i as f64,
                next_state: s,
                done: false,
            });
        }
        let mut rng = derive_stream(5, "buffer-sampling");
        let batch = buf.sample(16, &mut rng).unwrap();
        let mut rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        rewards.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rewards, (0..16).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn underfull_buffer_signals_not_ready() {
        let buf = ReplayBuffer::new(16);
        let mut rng = derive_stream(6, "buffer-sampling");
        assert!(buf.sample(4, &mut rng).is_none());
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let mut buf = ReplayBuffer::new(64);
        let s = nominal_state();
        for i in 0..64 {
            buf.push(Transition {
                state: s,
                action: vec![],
                reward: i as f64,
                next_state: s,
                done: false,
            });
        }
        let a: Vec<f64> = buf
            .sample(8, &mut derive_stream(7, "buffer-sampling"))
            .unwrap()
            .iter()
            .map(|t| t.reward)
            .collect();
        let b: Vec<f64> = buf
            .sample(8, &mut derive_stream(7, "buffer-sampling"))
            .unwrap()
            .iter()
            .map(|t| t.reward)
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn td_targets_terminal_and_gamma_cases() {
        let mut agent = DdpgAgent::new(DdpgConfig::default(), 8).unwrap();
        let s = nominal_state();
        let done = Transition {
            state: s,
            action: vec![0.0; 48],
            reward: 3.5,
            next_state: s,
            done: true,
        };
        let y = td_targets(&[&done], &mut agent.target_actor, &mut agent.target_critic, 0.99)
            .unwrap();
        assert_eq!(y[0], 3.5);

        let live = Transition { done: false, ..done.clone() };
        let y0 = td_targets(&[&live], &mut agent.target_actor, &mut agent.target_critic, 0.0)
            .unwrap();
        assert_eq!(y0[0], 3.5);
    }

    #[test]
    fn td_target_arithmetic_with_known_critic() {
        // Critic with all-zero params outputs Q = 0; then patch the final
        // bias to 2.0 so Q = 2 everywhere.
        let cfg = DdpgConfig {
            actor_hidden: vec![8],
            critic_hidden: vec![8],
            ..DdpgConfig::default()
        };
        let mut agent = DdpgAgent::new(cfg, 9).unwrap();
        let n = agent.target_critic.params().len();
        agent.target_critic.params_mut().fill(0.0);
        agent.target_critic.params_mut()[n - 1] = 2.0;
        let s = nominal_state();
        let t = Transition {
            state: s,
            action: vec![0.0; 48],
            reward: 1.0,
            next_state: s,
            done: false,
        };
        let y = td_targets(&[&t], &mut agent.target_actor, &mut agent.target_critic, 0.99)
            .unwrap();
        assert!((y[0] - 2.98).abs() < 1e-12);
    }

    #[test]
    fn td_targets_touch_no_parameters() {
        let mut agent = DdpgAgent::new(DdpgConfig::default(), 10).unwrap();
        let before_a = agent.target_actor.params().to_vec();
        let before_c = agent.target_critic.params().to_vec();
        let s = nominal_state();
        let t = Transition {
            state: s,
            action: vec![0.1; 48],
            reward: 1.0,
            next_state: s,
            done: false,
        };
        td_targets(&[&t], &mut agent.target_actor, &mut agent.target_critic, 0.99).unwrap();
        assert_eq!(agent.target_actor.params(), &before_a[..]);
        assert_eq!(agent.target_critic.params(), &before_c[..]);
    }

    #[test]
    fn exact_critic_has_zero_loss_and_zero_grads() {
        let cfg = DdpgConfig {
            critic_hidden: vec![8],
            ..DdpgConfig::default()
        };
        let mut agent = DdpgAgent::new(cfg, 11).unwrap();
        agent.critic.params_mut().fill(0.0);
        let s = nominal_state();
        let t = Transition {
            state: s,
            action: vec![0.2; 48],
            reward: 0.0,
            next_state: s,
            done: true,
        };
        // Q(s,a) = 0 and y = 0, so the loss and its gradient vanish.
        let opt = OptimizerConfig::sgd(0.1);
        let before = agent.critic.params().to_vec();
        let loss = critic_update(&mut agent.critic, &[&t], &[0.0], &opt).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(agent.critic.params(), &before[..]);
    }

    #[test]
    fn single_sample_critic_loss_is_squared_error() {
        let mut agent = DdpgAgent::new(DdpgConfig::default(), 12).unwrap();
        let s = nominal_state();
        let t = Transition {
            state: s,
            action: vec![0.3; 48],
            reward: 0.0,
            next_state: s,
            done: true,
        };
        // Measure Q before the update, then check the reported loss.
        let features = Mat::from_vec(1, STATE_DIM, s.to_features().to_vec());
        let mut sa = Mat::zeros(1, STATE_DIM + 48);
        sa.row_mut(0)[..STATE_DIM].copy_from_slice(features.row(0));
        sa.row_mut(0)[STATE_DIM..].copy_from_slice(&t.action);
        let q = agent.critic.forward(&sa).unwrap().get(0, 0);
        let y = 5.0;
        let opt = OptimizerConfig::adam(1e-4);
        let loss = critic_update(&mut agent.critic, &[&t], &[y], &opt).unwrap();
        assert!((loss - (y - q) * (y - q)).abs() < 1e-12);
    }

    #[test]
    fn constant_critic_gives_zero_actor_gradient() {
        let cfg = DdpgConfig {
            critic_hidden: vec![8],
            ..DdpgConfig::default()
        };
        let mut agent = DdpgAgent::new(cfg, 13).unwrap();
        // Zero critic params: Q is constant in the action, so the policy
        // gradient is exactly zero and the actor must not move.
        agent.critic.params_mut().fill(0.0);
        let before = agent.actor.params().to_vec();
        let s = nominal_state();
        let opt = OptimizerConfig::sgd(1.0);
        actor_update(&mut agent.actor, &mut agent.critic, &[&s], &opt).unwrap();
        assert_eq!(agent.actor.params(), &before[..]);
    }

    #[test]
    fn actor_climbs_analytic_linear_critic() {
        // Critic Q(s, a) = sum(a): weights 1 on the action block.
        let mut critic = init_network(&[LayerSpec::dense(STATE_DIM + 48, 1)], 0).unwrap();
        critic.params_mut().fill(0.0);
        for i in STATE_DIM..STATE_DIM + 48 {
            critic.params_mut()[i] = 1.0;
        }
        let mut actor = init_network(
            &[
                LayerSpec::dense(STATE_DIM, 32),
                LayerSpec::Relu,
                LayerSpec::dense(32, 48),
                LayerSpec::Tanh,
            ],
            1,
        )
        .unwrap();
        let s = nominal_state();
        let opt = OptimizerConfig::adam(1e-2);
        let mean_action = |actor: &mut Network| {
            let f = Mat::from_vec(1, STATE_DIM, s.to_features().to_vec());
            let out = actor.forward(&f).unwrap();
            out.data.iter().sum::<f64>() / 48.0
        };
        let before = mean_action(&mut actor);
        for _ in 0..200 {
            actor_update(&mut actor, &mut critic, &[&s], &opt).unwrap();
        }
        let after = mean_action(&mut actor);
        // Ascending sum(a) drives every component toward +1.
        assert!(before.abs() < 0.2, "unexpected init {before}");
        assert!(after > 0.95, "actor stalled at mean action {after}");
    }

    #[test]
    fn critic_update_aborts_on_non_finite_target() {
        let mut agent = DdpgAgent::new(DdpgConfig::default(), 40).unwrap();
        let s = nominal_state();
        let t = Transition {
            state: s,
            action: vec![0.0; 48],
            reward: f64::NAN,
            next_state: s,
            done: true,
        };
        let before = agent.critic.params().to_vec();
        let opt = OptimizerConfig::adam(1e-3);
        assert!(critic_update(&mut agent.critic, &[&t], &[f64::NAN], &opt).is_err());
        assert_eq!(agent.critic.params(), &before[..]);
    }

    #[test]
    fn actor_update_leaves_critic_untouched() {
        let mut agent = DdpgAgent::new(DdpgConfig::default(), 14).unwrap();
        let before = agent.critic.params().to_vec();
        let s = nominal_state();
        let opt = OptimizerConfig::adam(1e-3);
        actor_update(&mut agent.actor, &mut agent.critic, &[&s], &opt).unwrap();
        assert_eq!(agent.critic.params(), &before[..]);
        // Scratch gradients cleared.
        assert!(agent.critic.grads().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn agent_checkpoint_roundtrip() {
        let mut agent = DdpgAgent::new(DdpgConfig::default(), 50).unwrap();
        // Perturb the critic so the files differ from a fresh init.
        agent.critic.params_mut()[0] = 42.0;
        let dir = tempfile::tempdir().unwrap();
        agent.save(dir.path()).unwrap();
        let loaded = DdpgAgent::load(DdpgConfig::default(), 50, dir.path()).unwrap();
        assert_eq!(loaded.actor.params(), agent.actor.params());
        assert_eq!(loaded.critic.params(), agent.critic.params());
        assert_eq!(loaded.target_actor.params(), agent.target_actor.params());
        assert_eq!(loaded.critic.params()[0], 42.0);
    }

    #[test]
    fn soft_update_blends() {
        let mut main = init_network(&[LayerSpec::dense(2, 2)], 20).unwrap();
        let mut target = main.clone();
        main.params_mut().fill(1.0);
        target.params_mut().fill(0.0);

        soft_update(&mut target, &main, 1e-3).unwrap();
        assert!(target.params().iter().all(|&p| (p - 0.001).abs() < 1e-15));

        let mut t2 = main.clone();
        t2.params_mut().fill(0.0);
        soft_update(&mut t2, &main, 1.0).unwrap();
        assert_eq!(t2.params(), main.params());

        let mut t3 = main.clone();
        t3.params_mut().fill(0.25);
        soft_update(&mut t3, &main, 0.0).unwrap();
        assert!(t3.params().iter().all(|&p| p == 0.25));
    }

    #[test]
    fn target_lag_contracts_geometrically() {
        let main = init_network(&[LayerSpec::dense(4, 4)], 21).unwrap();
        let mut target = main.clone();
        for p in target.params_mut() {
            *p += 1.0;
        }
        let tau = 1e-3;
        let n = 200;
        for _ in 0..n {
            soft_update(&mut target, &main, tau).unwrap();
        }
        let expect = (1.0 - tau) * ((1.0f64 - tau).powi(n as i32 - 1));
        for (t, m) in target.params().iter().zip(main.params()) {
            let rel = ((t - m) - expect).abs() / expect;
            assert!(rel < 1e-12, "relative deviation {rel}");
        }
    }

    #[test]
    fn critic_regression_loss_decreases() {
        let cfg = DdpgConfig {
            critic_hidden: vec![32],
            ..DdpgConfig::default()
        };
        let mut agent = DdpgAgent::new(cfg, 22).unwrap();
        let s = nominal_state();
        let mut rng = derive_stream(22, "toy-batch");
        let transitions: Vec<Transition> = (0..32)
            .map(|_| {
                let action: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
                let reward = action.iter().map(|a| -a * a).sum::<f64>();
                Transition {
                    state: s,
                    action,
                    reward,
                    next_state: s,
                    done: true,
                }
            })
            .collect();
        let refs: Vec<&Transition> = transitions.iter().collect();
        let targets: Vec<f64> = refs.iter().map(|t| t.reward).collect();
        let opt = OptimizerConfig::adam(1e-3);
        let first = critic_update(&mut agent.critic, &refs, &targets, &opt).unwrap();
        let mut last = first;
        for _ in 0..99 {
            last = critic_update(&mut agent.critic, &refs, &targets, &opt).unwrap();
        }
        assert!(last < first, "loss went {first} -> {last}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// FIFO eviction preserves insertion order for any push sequence.
        #[test]
        fn buffer_order_matches_insertion(pushes in 1usize..400, capacity in 1usize..64) {
            let mut buf = ReplayBuffer::new(capacity);
            let s = AgentState {
                snr_leg_db: 0.0, snr_eve_db: 0.0, cu: 1.0,
                psnr_leg_prev: 0.0, psnr_eve_prev: 0.0, loss_prev: 0.0, progress: 0.0,
            };
            for i in 0..pushes {
                buf.push(Transition {
                    state: s, action: vec![], reward: i as f64, next_state: s, done: false,
                });
            }
            let expect_len = pushes.min(capacity);
            prop_assert_eq!(buf.len(), expect_len);
            let rewards: Vec<f64> = buf.iter().map(|t| t.reward).collect();
            let first = pushes - expect_len;
            let expected: Vec<f64> = (first..pushes).map(|i| i as f64).collect();
            prop_assert_eq!(rewards, expected);
        }
    }
}

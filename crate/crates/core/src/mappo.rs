//! Two-agent PPO with centralized critics: a routing agent choosing one
//! masked move per packet lane and a phase-shift agent driving the serving
//! RIS panel.

use crate::channel::{self, CascadeChannel, ChannelError, LinkBudget, LinkGeometry, RisPanel};
use crate::geometry::{Constellation, GeoConstants, GroundSite};
use crate::learnkit::{
    self, categorical_argmax, categorical_entropy, categorical_grad, categorical_sample, gaussian_entropy,
    gaussian_grad, gaussian_logprob, gaussian_sample, masked_log_softmax, AdamState, LearnError, Mlp,
};
use crate::link::{self, LinkParams, PathDescription, PathNodes, PhasePolicy};
use crate::netsim::{NetError, NetState, Packet, RouteAction, Topology, TrafficConfig};
use crate::rng::{stream, Rng};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const TAG_ROLLOUT: u64 = 0x524f_4c4c;
const TAG_UPDATE: u64 = 0x5550_4454;
const TAG_INIT: u64 = 0x494e_4954;

/// Distance scale and floor of the routing reward.
pub const ROUTE_D_SCALE_M: f64 = 1e6;
pub const ROUTE_EPS: f64 = 1e-3;
/// Features per packet lane in the routing observation.
pub const LANE_FEATURES: usize = 5;
/// Length of the phase-shift observation.
pub const PS_OBS_DIM: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum MappoError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("training diverged at iteration {iter}: non-finite reward")]
    Diverged { iter: usize },
    #[error("environment: {0}")]
    Env(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoHyper {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    /// Minibatches per update; a rollout holds `minibatch·iters_per_update`
    /// transitions.
    pub iters_per_update: usize,
    pub entropy_coef: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub init_log_std: f64,
    /// Environment steps per training call.
    pub total_steps: usize,
    /// Slots per episode in the full scenario.
    pub episode_slots: usize,
}

impl Default for PpoHyper {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            epochs: 3,
            minibatch: 16,
            lr: 3e-4,
            iters_per_update: 16,
            entropy_coef: 0.01,
            actor_hidden: vec![128, 128],
            critic_hidden: vec![16, 16],
            init_log_std: 0.0,
            total_steps: 50_000,
            episode_slots: 513,
        }
    }
}

impl PpoHyper {
    pub fn validate(&self) -> Result<(), String> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.gamma) || !unit(self.gae_lambda) {
            return Err("gamma and gae_lambda must lie in (0, 1]".into());
        }
        if self.clip_eps <= 0.0 {
            return Err("clip_eps must be positive".into());
        }
        if self.epochs == 0 || self.minibatch == 0 || self.iters_per_update == 0 {
            return Err("epochs, minibatch and iters_per_update must be positive".into());
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err("lr must be finite and non-negative".into());
        }
        Ok(())
    }

    pub fn rollout_len(&self) -> usize {
        self.minibatch * self.iters_per_update
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum AgentId {
    Routing,
    Phase,
}

impl AgentId {
    pub fn name(self) -> &'static str {
        match self {
            Self::Routing => "RO",
            Self::Phase => "PS",
        }
    }
}

/// How the phase agent's output maps onto panel phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    /// phase = π(1 + tanh z)
    Absolute,
    /// phase = θ_LoS + π·tanh z, so z = 0 reproduces geometric steering.
    Residual,
}

/// Bounded squashing of a Gaussian pre-activation onto [0, 2π).
pub fn squash_phase(base: f64, z: f64) -> f64 {
    channel::wrap_phase(base + PI * (1.0 + z.tanh()))
}

pub fn phase_bases(mode: PhaseMode, los: &[f64]) -> Vec<f64> {
    match mode {
        PhaseMode::Absolute => vec![0.0; los.len()],
        PhaseMode::Residual => los.iter().map(|t| t - PI).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentObs {
    pub features: Vec<f64>,
    /// Per-lane masks for the routing agent; `None` lanes are empty.
    pub masks: Option<Vec<Option<[bool; 5]>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentAction {
    Routing(Vec<Option<usize>>),
    /// Gaussian pre-activations, one per element.
    Phase(Vec<f64>),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct JointAction {
    pub routing: Option<Vec<Option<RouteAction>>>,
    pub phase: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Observation {
    pub routing: Option<AgentObs>,
    pub phase: Option<AgentObs>,
}

impl Observation {
    /// Centralized critic input: both local observations concatenated.
    pub fn global(&self, routing_dim: usize, phase_dim: usize) -> Vec<f64> {
        let mut g = Vec::with_capacity(routing_dim + phase_dim);
        match &self.routing {
            Some(o) => g.extend_from_slice(&o.features),
            None => g.resize(routing_dim, 0.0),
        }
        match &self.phase {
            Some(o) => g.extend_from_slice(&o.features),
            None => g.resize(routing_dim + phase_dim, 0.0),
        }
        g
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepFeedback {
    pub routing_reward: Option<f64>,
    pub phase_reward: Option<f64>,
    pub done: bool,
    pub delivered: Vec<Packet>,
    pub dropped: Vec<Packet>,
}

/// A cooperative environment hosting the routing agent, the phase agent or
/// both.
pub trait MultiAgentEnv: Clone + Send + Sync {
    /// Packet lanes seen by the routing agent (0 when absent).
    fn routing_lanes(&self) -> usize;
    /// Phase elements driven by the phase agent (0 when absent).
    fn phase_dim(&self) -> usize;
    fn reset(&mut self, rng: &mut Rng) -> Result<(), MappoError>;
    fn observe(&self) -> Observation;
    fn step(&mut self, action: &JointAction, rng: &mut Rng) -> Result<StepFeedback, MappoError>;

    fn routing_dim(&self) -> usize {
        self.routing_lanes() * LANE_FEATURES
    }

    fn phase_obs_dim(&self) -> usize {
        if self.phase_dim() > 0 {
            PS_OBS_DIM
        } else {
            0
        }
    }
}

/// Routing reward: mean over acting packets of 1/(d/d_scale + ε), which
/// equals the cap 1/ε on delivery.
pub fn routing_reward(remaining: &[Option<f64>]) -> Option<f64> {
    let vals: Vec<f64> = remaining
        .iter()
        .flatten()
        .map(|&d| if d.is_finite() { 1.0 / (d.max(0.0) / ROUTE_D_SCALE_M + ROUTE_EPS) } else { 0.0 })
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

const DB_FLOOR: f64 = -300.0;

/// Phase-agent observation: total loss and previous SNR in dB with fixed
/// scales, then the hop distances in units of 10⁴ km.
pub fn ps_observe(total_loss_db: f64, gamma_prev: f64, geometry: &LinkGeometry) -> Vec<f64> {
    let gamma_db = if gamma_prev > 0.0 { (10.0 * gamma_prev.log10()).max(DB_FLOOR) } else { DB_FLOOR };
    vec![
        total_loss_db / 300.0,
        gamma_db / 60.0,
        geometry.d_bs / 1e7,
        geometry.isl_total() / 1e7,
        geometry.d_su / 1e7,
    ]
}

fn grid_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

/// Routing observation: per lane the packet's (plane, index) and the serving
/// satellite's (plane, index) on a [0, 1] grid plus an active flag; empty
/// lanes are zero.
pub fn routing_observe(topo: &Topology, net: &NetState) -> AgentObs {
    let planes = topo.state.plane_sizes.len();
    let mut features = vec![0.0; net.lanes.len() * LANE_FEATURES];
    let mut masks = vec![None; net.lanes.len()];
    for (i, lane) in net.lanes.iter().enumerate() {
        let Some(p) = lane else { continue };
        let crate::netsim::Node::Sat(s) = p.node else { continue };
        let (m, k) = topo.state.grid[s];
        let f = &mut features[i * LANE_FEATURES..(i + 1) * LANE_FEATURES];
        f[0] = grid_coord(m, planes);
        f[1] = grid_coord(k, topo.state.plane_sizes[m]);
        if let Some(r) = topo.routes[p.dest_rue] {
            let (dm, dk) = topo.state.grid[r.serving];
            f[2] = grid_coord(dm, planes);
            f[3] = grid_coord(dk, topo.state.plane_sizes[dm]);
        }
        f[4] = 1.0;
        masks[i] = Some(topo.legal_actions(p));
    }
    AgentObs {
        features,
        masks: Some(masks),
    }
}

/// One agent: actor, state-independent log-std (a bias-only network) and a
/// centralized critic, each with its own Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: AgentId,
    pub actor: Mlp,
    pub log_std: Mlp,
    pub critic: Mlp,
    pub opt_actor: AdamState,
    pub opt_log_std: AdamState,
    pub opt_critic: AdamState,
    /// Fixed factor mapping returns onto the critic's output scale; set from
    /// the first batch and frozen so later targets stay comparable.
    pub value_scale: Option<f64>,
}

const ROUTE_INPUT_GAIN: f64 = 16.0;

fn layer_gains(num_dims: usize, out_scale: f64) -> Vec<f64> {
    let mut g = vec![std::f64::consts::SQRT_2; num_dims - 1];
    g[0] = ROUTE_INPUT_GAIN;
    *g.last_mut().unwrap() = out_scale;
    g
}

fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

impl Agent {
    pub fn new(id: AgentId, obs_dim: usize, global_dim: usize, action_dim: usize, hyper: &PpoHyper, seed: u64) -> Self {
        let mut rng = stream(seed, &[TAG_INIT, id as u64]);
        let actor_dims = dims(obs_dim, &hyper.actor_hidden, action_dim);
        let critic_dims = dims(global_dim, &hyper.critic_hidden, 1);
        let (actor, critic) = match id {
            // Grid coordinates move in steps of 1/(n-1); a steep first layer
            // lets tanh units tell neighbouring cells apart.
            AgentId::Routing => (
                Mlp::with_gains(&actor_dims, &layer_gains(actor_dims.len(), 0.01), &mut rng),
                Mlp::with_gains(&critic_dims, &layer_gains(critic_dims.len(), 1.0), &mut rng),
            ),
            AgentId::Phase => (Mlp::new(&actor_dims, 0.01, &mut rng), Mlp::new(&critic_dims, 1.0, &mut rng)),
        };
        let std_dim = if id == AgentId::Phase { action_dim } else { 0 };
        let mut log_std = Mlp::zeros(&[0, std_dim]);
        log_std.params.iter_mut().for_each(|p| *p = hyper.init_log_std);
        Self {
            id,
            opt_actor: AdamState::new(actor.num_params(), hyper.lr),
            opt_log_std: AdamState::new(log_std.num_params(), hyper.lr),
            opt_critic: AdamState::new(critic.num_params(), hyper.lr),
            actor,
            log_std,
            critic,
            value_scale: None,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.opt_actor.lr = lr;
        self.opt_log_std.lr = lr;
        self.opt_critic.lr = lr;
    }

    pub fn value(&self, global: &[f64]) -> Result<f64, MappoError> {
        Ok(self.critic.forward(global)?[0] / self.value_scale.unwrap_or(1.0))
    }

    /// Samples (or, when `greedy`, takes the mode of) the policy.
    pub fn act(&self, obs: &AgentObs, greedy: bool, rng: &mut Rng) -> Result<(AgentAction, f64), MappoError> {
        let out = self.actor.forward(&obs.features)?;
        match self.id {
            AgentId::Routing => {
                let masks = obs.masks.as_ref().ok_or_else(|| MappoError::Env("routing obs without masks".into()))?;
                let mut acts = Vec::with_capacity(masks.len());
                let mut lp = 0.0;
                for (i, m) in masks.iter().enumerate() {
                    let Some(m) = m else {
                        acts.push(None);
                        continue;
                    };
                    let logits = &out[i * 5..(i + 1) * 5];
                    let a = if greedy {
                        let a = categorical_argmax(logits, m);
                        lp += masked_log_softmax(logits, m)[a];
                        a
                    } else {
                        let (a, l) = categorical_sample(logits, m, rng);
                        lp += l;
                        a
                    };
                    acts.push(Some(a));
                }
                Ok((AgentAction::Routing(acts), lp))
            }
            AgentId::Phase => {
                let ls = &self.log_std.params;
                if greedy {
                    let lp = gaussian_logprob(&out, &out, ls);
                    Ok((AgentAction::Phase(out), lp))
                } else {
                    let (z, lp) = gaussian_sample(&out, ls, rng);
                    Ok((AgentAction::Phase(z), lp))
                }
            }
        }
    }

    /// Log-probability and entropy of `action` under the current parameters.
    pub fn logprob(&self, obs: &AgentObs, action: &AgentAction) -> Result<(f64, f64), MappoError> {
        let out = self.actor.forward(&obs.features)?;
        Ok(self.head_logprob(&out, obs, action))
    }

    fn head_logprob(&self, out: &[f64], obs: &AgentObs, action: &AgentAction) -> (f64, f64) {
        match action {
            AgentAction::Routing(acts) => {
                let masks = obs.masks.as_ref().expect("routing masks");
                let mut lp = 0.0;
                let mut ent = 0.0;
                for (i, (a, m)) in acts.iter().zip(masks).enumerate() {
                    if let (Some(a), Some(m)) = (a, m) {
                        let l = masked_log_softmax(&out[i * 5..(i + 1) * 5], m);
                        lp += l[*a];
                        ent += categorical_entropy(&l);
                    }
                }
                (lp, ent)
            }
            AgentAction::Phase(z) => {
                let ls = &self.log_std.params;
                (gaussian_logprob(z, out, ls), gaussian_entropy(ls))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: AgentObs,
    pub global_obs: Vec<f64>,
    pub action: AgentAction,
    pub logprob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

/// Generalized advantage estimation over concatenated episodes; `done`
/// cuts bootstrapping, `last_value` bootstraps an unfinished tail.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next_v = if dones[t] {
            0.0
        } else if t + 1 < n {
            values[t + 1]
        } else {
            last_value
        };
        let delta = rewards[t] + gamma * next_v - values[t];
        let carry = if dones[t] { 0.0 } else { acc };
        acc = delta + gamma * lambda * carry;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// One term of the clipped surrogate, min(r·A, clip(r, 1±ε)·A).
pub fn clipped_term(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

fn normalize(xs: &mut [f64]) {
    if xs.len() < 2 {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    xs.iter_mut().for_each(|x| *x = (*x - mean) / std);
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Minibatch steps skipped because of a non-finite loss.
    pub skipped: usize,
}

/// Critic regression step on (global_obs, target) pairs; returns the mean
/// squared error before the step.
pub fn value_update(agent: &mut Agent, inputs: &[&[f64]], targets: &[f64]) -> Result<f64, MappoError> {
    let mut grad = vec![0.0; agent.critic.num_params()];
    let n = inputs.len().max(1) as f64;
    let mut loss = 0.0;
    for (x, &y) in inputs.iter().zip(targets) {
        let cache = agent.critic.forward_cached(x)?;
        let v = cache.output()[0];
        loss += (v - y) * (v - y) / n;
        agent.critic.backward_into(&cache, &[2.0 * (v - y) / n], &mut grad);
    }
    if loss.is_finite() {
        agent.opt_critic.step(&mut agent.critic.params, &grad)?;
    }
    Ok(loss)
}

/// Clipped-surrogate policy update plus critic regression over `epochs`
/// shuffled passes of `minibatch`-sized chunks. A non-finite minibatch loss
/// restores the pre-update parameters and stops the update.
pub fn ppo_update(agent: &mut Agent, batch: &[Transition], hyper: &PpoHyper, rng: &mut Rng) -> Result<UpdateStats, MappoError> {
    let mut stats = UpdateStats::default();
    if batch.is_empty() {
        return Ok(stats);
    }
    let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    let values: Vec<f64> = batch.iter().map(|t| t.value).collect();
    let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
    let (mut adv, ret) = gae(&rewards, &values, &dones, 0.0, hyper.gamma, hyper.gae_lambda);
    normalize(&mut adv);
    let scale = *agent.value_scale.get_or_insert_with(|| {
        let m = ret.iter().map(|r| r.abs()).sum::<f64>() / ret.len() as f64;
        if m.is_finite() && m > 1e-12 {
            1.0 / m
        } else {
            1.0
        }
    });

    let snapshot = agent.clone();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut steps = 0usize;
    for _ in 0..hyper.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(hyper.minibatch) {
            let n = chunk.len() as f64;
            let mut ga = vec![0.0; agent.actor.num_params()];
            let mut gs = vec![0.0; agent.log_std.num_params()];
            let mut loss_pi = 0.0;
            for &i in chunk {
                let t = &batch[i];
                let cache = agent.actor.forward_cached(&t.obs.features)?;
                let out = cache.output().to_vec();
                let (lp, ent) = agent.head_logprob(&out, &t.obs, &t.action);
                let r = (lp - t.logprob).exp();
                let a = adv[i];
                loss_pi += (-clipped_term(r, a, hyper.clip_eps) - hyper.entropy_coef * ent) / n;
                // d(-surrogate)/d logp is -A·r on the unclipped branch, 0 otherwise.
                let unclipped = r * a <= r.clamp(1.0 - hyper.clip_eps, 1.0 + hyper.clip_eps) * a;
                let coef_lp = if unclipped { -a * r / n } else { 0.0 };
                let coef_ent = -hyper.entropy_coef / n;
                let mut up = vec![0.0; out.len()];
                match &t.action {
                    AgentAction::Routing(acts) => {
                        let masks = t.obs.masks.as_ref().expect("routing masks");
                        for (l, (act, m)) in acts.iter().zip(masks).enumerate() {
                            if let (Some(act), Some(m)) = (act, m) {
                                let g = categorical_grad(&out[l * 5..(l + 1) * 5], m, *act, coef_lp, coef_ent);
                                up[l * 5..(l + 1) * 5].copy_from_slice(&g);
                            }
                        }
                    }
                    AgentAction::Phase(z) => {
                        let (gm, gls) = gaussian_grad(z, &out, &agent.log_std.params, coef_lp, coef_ent);
                        up.copy_from_slice(&gm);
                        gs.iter_mut().zip(&gls).for_each(|(g, d)| *g += d);
                    }
                }
                agent.actor.backward_into(&cache, &up, &mut ga);
            }
            let inputs: Vec<&[f64]> = chunk.iter().map(|&i| batch[i].global_obs.as_slice()).collect();
            let targets: Vec<f64> = chunk.iter().map(|&i| ret[i] * scale).collect();
            if !loss_pi.is_finite() || ga.iter().chain(&gs).any(|g| !g.is_finite()) {
                *agent = snapshot;
                stats.skipped += 1;
                return Ok(stats);
            }
            agent.opt_actor.step(&mut agent.actor.params, &ga)?;
            if !gs.is_empty() {
                agent.opt_log_std.step(&mut agent.log_std.params, &gs)?;
            }
            let lv = value_update(agent, &inputs, &targets)?;
            stats.policy_loss += loss_pi;
            stats.value_loss += lv;
            steps += 1;
        }
    }
    if steps > 0 {
        stats.policy_loss /= steps as f64;
        stats.value_loss /= steps as f64;
    }
    Ok(stats)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Agents {
    pub routing: Option<Agent>,
    pub phase: Option<Agent>,
}

impl Agents {
    pub fn for_env(env: &impl MultiAgentEnv, hyper: &PpoHyper, seed: u64) -> Self {
        let rd = env.routing_dim();
        let pd = env.phase_obs_dim();
        let global = rd + pd;
        Self {
            routing: (rd > 0).then(|| Agent::new(AgentId::Routing, rd, global, env.routing_lanes() * 5, hyper, seed)),
            phase: (pd > 0).then(|| Agent::new(AgentId::Phase, pd, global, env.phase_dim(), hyper, seed)),
        }
    }

    fn dims(&self) -> (usize, usize) {
        (
            self.routing.as_ref().map_or(0, |a| a.actor.input_dim()),
            self.phase.as_ref().map_or(0, |a| a.actor.input_dim()),
        )
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.routing.iter_mut().chain(self.phase.iter_mut()).for_each(|a| a.set_lr(lr));
    }

    /// Joint action for one observation, with each agent's transition stub.
    #[allow(clippy::type_complexity)]
    pub fn act(
        &self,
        obs: &Observation,
        greedy: bool,
        rng: &mut Rng,
    ) -> Result<(JointAction, Option<(AgentAction, f64)>, Option<(AgentAction, f64)>), MappoError> {
        let mut joint = JointAction::default();
        let mut ro = None;
        let mut ps = None;
        if let (Some(agent), Some(o)) = (&self.routing, &obs.routing) {
            let any = o.masks.as_ref().is_some_and(|m| m.iter().any(Option::is_some));
            if any {
                let (a, lp) = agent.act(o, greedy, rng)?;
                if let AgentAction::Routing(acts) = &a {
                    joint.routing = Some(acts.iter().map(|x| x.and_then(RouteAction::from_index)).collect());
                }
                ro = Some((a, lp));
            }
        }
        if let (Some(agent), Some(o)) = (&self.phase, &obs.phase) {
            let (a, lp) = agent.act(o, greedy, rng)?;
            if let AgentAction::Phase(z) = &a {
                joint.phase = Some(z.clone());
            }
            ps = Some((a, lp));
        }
        Ok((joint, ro, ps))
    }

    /// Checkpoint of every network (actor, log-std, critic and a one-entry
    /// value-scale vector per agent, routing first) in the learnkit binary
    /// format.
    pub fn save(&self, w: impl std::io::Write) -> Result<(), LearnError> {
        let scales: Vec<Mlp> = self
            .routing
            .iter()
            .chain(self.phase.iter())
            .map(|a| Mlp {
                dims: vec![0, 1],
                params: vec![a.value_scale.unwrap_or(0.0)],
            })
            .collect();
        let nets: Vec<&Mlp> = self
            .routing
            .iter()
            .chain(self.phase.iter())
            .zip(&scales)
            .flat_map(|(a, s)| [&a.actor, &a.log_std, &a.critic, s])
            .collect();
        learnkit::write_checkpoint(&nets, w)
    }

    /// Loads networks saved by [`Agents::save`] into agents of matching shape.
    pub fn load(&mut self, r: impl std::io::Read) -> Result<(), LearnError> {
        let nets = learnkit::read_checkpoint(r)?;
        let mut it = nets.into_iter();
        let mut next = |dims: &[usize]| -> Result<Mlp, LearnError> {
            let net = it.next().ok_or_else(|| LearnError::Checkpoint("too few networks".into()))?;
            if net.dims != dims {
                return Err(LearnError::Checkpoint(format!("shape {:?} does not match {:?}", net.dims, dims)));
            }
            Ok(net)
        };
        for agent in self.routing.iter_mut().chain(self.phase.iter_mut()) {
            agent.actor = next(&agent.actor.dims)?;
            agent.log_std = next(&agent.log_std.dims)?;
            agent.critic = next(&agent.critic.dims)?;
            let s = next(&[0, 1])?.params[0];
            agent.value_scale = (s > 0.0).then_some(s);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct Rollout {
    ro: Vec<Transition>,
    ps: Vec<Transition>,
    ro_returns: Vec<f64>,
    ps_returns: Vec<f64>,
    steps: usize,
}

fn mark_done(ts: &mut [Transition], start: usize) {
    if ts.len() > start {
        ts.last_mut().unwrap().done = true;
    }
}

fn collect<E: MultiAgentEnv>(env: &mut E, agents: &Agents, rng: &mut Rng, min_steps: usize) -> Result<Rollout, MappoError> {
    let (rd, pd) = agents.dims();
    let mut out = Rollout::default();
    while out.steps < min_steps {
        env.reset(rng)?;
        let (ro_start, ps_start) = (out.ro.len(), out.ps.len());
        let (mut ro_ret, mut ps_ret) = (0.0, 0.0);
        loop {
            let obs = env.observe();
            let global = obs.global(rd, pd);
            let (joint, ro, ps) = agents.act(&obs, false, rng)?;
            let fb = env.step(&joint, rng)?;
            out.steps += 1;
            if let (Some((action, logprob)), Some(agent)) = (ro, &agents.routing) {
                let reward = fb.routing_reward.unwrap_or(0.0);
                ro_ret += reward;
                out.ro.push(Transition {
                    obs: obs.routing.clone().unwrap(),
                    global_obs: global.clone(),
                    action,
                    logprob,
                    reward,
                    value: agent.value(&global)?,
                    done: false,
                });
            }
            if let (Some((action, logprob)), Some(agent)) = (ps, &agents.phase) {
                let reward = fb.phase_reward.unwrap_or(0.0);
                ps_ret += reward;
                out.ps.push(Transition {
                    obs: obs.phase.clone().unwrap(),
                    global_obs: global.clone(),
                    action,
                    logprob,
                    reward,
                    value: agent.value(&global)?,
                    done: false,
                });
            }
            if fb.done {
                break;
            }
        }
        if out.ro.len() > ro_start {
            out.ro_returns.push(ro_ret);
        }
        if out.ps.len() > ps_start {
            out.ps_returns.push(ps_ret);
        }
        mark_done(&mut out.ro, ro_start);
        mark_done(&mut out.ps, ps_start);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub iter: usize,
    pub agent: &'static str,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub value_loss: f64,
    pub policy_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub workers: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<CurveRow>,
    pub steps: usize,
    pub iterations: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Alternates parallel rollouts (one environment clone and RNG stream per
/// worker, results merged in worker order) with PPO updates of each agent.
/// On a non-finite reward the agents keep their last finite parameters and
/// the error is returned.
pub fn train<E: MultiAgentEnv>(env: &E, agents: &mut Agents, hyper: &PpoHyper, cfg: &TrainConfig) -> Result<TrainReport, MappoError> {
    let workers = cfg.workers.max(1);
    let per_worker = hyper.rollout_len().div_ceil(workers);
    let pool = (workers > 1)
        .then(|| rayon::ThreadPoolBuilder::new().num_threads(workers).build())
        .transpose()
        .map_err(|e| MappoError::Env(e.to_string()))?;
    let mut report = TrainReport::default();
    let mut iter = 0usize;
    while report.steps < cfg.total_steps {
        let run = |w: usize| -> Result<Rollout, MappoError> {
            let mut e = env.clone();
            let mut rng = stream(cfg.seed, &[TAG_ROLLOUT, iter as u64, w as u64]);
            collect(&mut e, agents, &mut rng, per_worker)
        };
        let parts: Vec<Result<Rollout, MappoError>> = match &pool {
            Some(p) => p.install(|| (0..workers).into_par_iter().map(run).collect()),
            None => (0..workers).map(run).collect(),
        };
        let mut roll = Rollout::default();
        for p in parts {
            let p = p?;
            roll.ro.extend(p.ro);
            roll.ps.extend(p.ps);
            roll.ro_returns.extend(p.ro_returns);
            roll.ps_returns.extend(p.ps_returns);
            roll.steps += p.steps;
        }
        if roll.ro.iter().chain(&roll.ps).any(|t| !t.reward.is_finite()) {
            return Err(MappoError::Diverged { iter });
        }
        let mut rng = stream(cfg.seed, &[TAG_UPDATE, iter as u64]);
        for (agent, batch, returns) in [
            (agents.routing.as_mut(), &roll.ro, &roll.ro_returns),
            (agents.phase.as_mut(), &roll.ps, &roll.ps_returns),
        ] {
            let Some(agent) = agent else { continue };
            let stats = ppo_update(agent, batch, hyper, &mut rng)?;
            let (m, s) = mean_std(returns);
            report.curve.push(CurveRow {
                iter,
                agent: agent.id.name(),
                reward_mean: m,
                reward_std: s,
                value_loss: stats.value_loss,
                policy_loss: stats.policy_loss,
            });
        }
        report.steps += roll.steps;
        iter += 1;
    }
    report.iterations = iter;
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeSummary {
    pub routing_return: f64,
    pub phase_rewards: Vec<f64>,
    pub delivered: Vec<Packet>,
    pub dropped: Vec<Packet>,
    pub steps: usize,
}

/// Runs one episode with greedy (mode) actions.
pub fn run_episode<E: MultiAgentEnv>(env: &mut E, agents: &Agents, rng: &mut Rng) -> Result<EpisodeSummary, MappoError> {
    env.reset(rng)?;
    let mut s = EpisodeSummary::default();
    loop {
        let obs = env.observe();
        let (joint, _, _) = agents.act(&obs, true, rng)?;
        let fb = env.step(&joint, rng)?;
        s.steps += 1;
        s.routing_return += fb.routing_reward.unwrap_or(0.0);
        s.phase_rewards.extend(fb.phase_reward);
        s.delivered.extend(fb.delivered);
        s.dropped.extend(fb.dropped);
        if fb.done {
            return Ok(s);
        }
    }
}

/// One packet per episode on a small constellation: the GBS sits beneath a
/// random entry satellite and the RUE beneath a random serving satellite.
#[derive(Debug, Clone)]
pub struct RoutingEnv {
    pub constellation: Constellation,
    pub consts: GeoConstants,
    pub min_elev_rad: f64,
    pub traffic: TrafficConfig,
    /// Keep the topology of slot 0 for the whole episode.
    pub stationary: bool,
    topo: Option<Topology>,
    net: NetState,
    entry: usize,
    serving: usize,
    gbs: GroundSite,
    rue: GroundSite,
}

impl RoutingEnv {
    pub fn new(constellation: Constellation, consts: GeoConstants, traffic: TrafficConfig, stationary: bool) -> Self {
        Self {
            constellation,
            consts,
            min_elev_rad: 12f64.to_radians(),
            traffic,
            stationary,
            topo: None,
            net: NetState::new(1),
            entry: 0,
            serving: 0,
            gbs: GroundSite { lat_rad: 0.0, lon_rad: 0.0 },
            rue: GroundSite { lat_rad: 0.0, lon_rad: 0.0 },
        }
    }

    /// Entry and serving satellites of the current episode.
    pub fn endpoints(&self) -> (usize, usize) {
        (self.entry, self.serving)
    }

    pub fn topology(&self) -> Option<&Topology> {
        self.topo.as_ref()
    }

    fn build_topology(&self, slot: u64) -> Topology {
        let state = self.constellation.state(slot, &self.consts);
        Topology::new(
            state,
            vec![self.gbs.position(&self.consts)],
            vec![self.rue.position(&self.consts)],
            &[Some((0, self.serving))],
            self.min_elev_rad,
            &self.consts,
        )
    }
}

impl MultiAgentEnv for RoutingEnv {
    fn routing_lanes(&self) -> usize {
        1
    }

    fn phase_dim(&self) -> usize {
        0
    }

    fn reset(&mut self, rng: &mut Rng) -> Result<(), MappoError> {
        let n = self.constellation.num_sats();
        self.entry = rng.random_range(0..n);
        self.serving = rng.random_range(0..n);
        let state = self.constellation.state(0, &self.consts);
        self.gbs = GroundSite::beneath(state.positions[self.entry]);
        self.rue = GroundSite::beneath(state.positions[self.serving]);
        let topo = self.build_topology(0);
        self.net = NetState::new(1);
        self.net.inject(&topo, &[0], self.traffic.packet_size_bits);
        if self.net.in_flight() != 1 {
            return Err(MappoError::Env("packet could not enter the constellation".into()));
        }
        self.topo = Some(topo);
        Ok(())
    }

    fn observe(&self) -> Observation {
        let topo = self.topo.as_ref().expect("reset before observe");
        Observation {
            routing: Some(routing_observe(topo, &self.net)),
            phase: None,
        }
    }

    fn step(&mut self, action: &JointAction, _rng: &mut Rng) -> Result<StepFeedback, MappoError> {
        let topo = self.topo.as_ref().expect("reset before step");
        let acts = action.routing.clone().unwrap_or_else(|| vec![None]);
        let out = self.net.step(topo, &acts, &[f64::INFINITY], &self.traffic, &self.consts)?;
        let done = self.net.in_flight() == 0;
        if !self.stationary && !done {
            self.topo = Some(self.build_topology(self.net.slot));
        }
        Ok(StepFeedback {
            routing_reward: routing_reward(&out.remaining),
            phase_reward: None,
            done,
            delivered: out.delivered,
            dropped: out.dropped,
        })
    }
}

/// A fixed single-hop link whose serving panel is driven by the phase agent.
#[derive(Debug, Clone)]
pub struct PhaseEnv {
    pub params: LinkParams,
    pub desc: PathDescription,
    pub mode: PhaseMode,
    pub horizon: usize,
    /// Redraw the Rician channel each step instead of using pure LoS.
    pub fading: bool,
    budget: LinkBudget,
    bases: Vec<f64>,
    cascade: CascadeChannel,
    gamma_prev: f64,
    t: usize,
}

impl PhaseEnv {
    pub fn new(params: LinkParams, nodes: &PathNodes, mode: PhaseMode, horizon: usize, fading: bool) -> Result<Self, MappoError> {
        let desc = PathDescription::new(&params, nodes)?;
        let budget = desc.budget(&params)?;
        let los = desc.los_steering(&params)?;
        let bases = phase_bases(mode, &los.last().unwrap().phases_rad);
        let cascade = CascadeChannel::los_only(desc.los_hops.clone(), desc.los_terminal.clone(), params.noise_psd)?;
        Ok(Self {
            params,
            desc,
            mode,
            horizon: horizon.max(1),
            fading,
            budget,
            bases,
            cascade,
            gamma_prev: 0.0,
            t: 0,
        })
    }

    /// Panel phases for pre-activations `z`.
    pub fn phases(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.bases).map(|(&z, &b)| squash_phase(b, z)).collect()
    }

    /// Reward and SNR per watt of a phase vector on the current channel.
    pub fn score(&mut self, phases: &[f64]) -> Result<(f64, f64), MappoError> {
        let panels = link::configure(&self.desc, &self.params, &mut self.cascade, &PhasePolicy::Serving(phases.to_vec()))?;
        let r = channel::ps_reward(&self.cascade, &panels)?;
        let g = channel::snr(&self.cascade, &panels, &self.budget, 1.0, true)?;
        Ok((r, g))
    }

    /// Analytic optimum (co-phased serving panel) on the current channel.
    pub fn coherent_panels(&mut self) -> Result<Vec<RisPanel>, MappoError> {
        Ok(link::configure(&self.desc, &self.params, &mut self.cascade, &PhasePolicy::Coherent)?)
    }
}

impl MultiAgentEnv for PhaseEnv {
    fn routing_lanes(&self) -> usize {
        0
    }

    fn phase_dim(&self) -> usize {
        self.params.elements()
    }

    fn reset(&mut self, rng: &mut Rng) -> Result<(), MappoError> {
        self.t = 0;
        self.gamma_prev = 0.0;
        if self.fading {
            self.cascade = self.desc.realize(&self.params, rng)?;
        }
        Ok(())
    }

    fn observe(&self) -> Observation {
        Observation {
            routing: None,
            phase: Some(AgentObs {
                features: ps_observe(self.budget.total_db, self.gamma_prev, &self.desc.geometry),
                masks: None,
            }),
        }
    }

    fn step(&mut self, action: &JointAction, rng: &mut Rng) -> Result<StepFeedback, MappoError> {
        let z = action.phase.as_ref().ok_or_else(|| MappoError::Env("phase action missing".into()))?;
        if z.len() != self.phase_dim() {
            return Err(MappoError::Env(format!("{} phases for {} elements", z.len(), self.phase_dim())));
        }
        let phases = self.phases(z);
        let (reward, gamma) = self.score(&phases)?;
        self.gamma_prev = gamma;
        self.t += 1;
        if self.fading {
            self.cascade = self.desc.realize(&self.params, rng)?;
        }
        Ok(StepFeedback {
            routing_reward: None,
            phase_reward: Some(reward),
            done: self.t >= self.horizon,
            ..Default::default()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gae_examples() {
        let (a, r) = gae(&[0.0; 4], &[0.0; 4], &[false, false, false, true], 0.0, 0.95, 0.95);
        assert!(a.iter().chain(&r).all(|&x| x == 0.0));
        let (a, _) = gae(&[1.0], &[0.5], &[true], 0.0, 0.95, 0.95);
        assert_relative_eq!(a[0], 0.5);
    }

    #[test]
    fn gae_limits() {
        let rewards = [0.3, -1.0, 2.0, 0.5, 1.5];
        let values = [0.1, 0.4, -0.2, 0.9, 0.3];
        let dones = [false, false, true, false, true];
        let (a0, _) = gae(&rewards, &values, &dones, 0.0, 0.9, 0.0);
        for t in 0..5 {
            let next = if dones[t] { 0.0 } else { values[t + 1] };
            assert!((a0[t] - (rewards[t] + 0.9 * next - values[t])).abs() < 1e-12);
        }
        let (a1, _) = gae(&rewards, &values, &dones, 0.0, 0.9, 1.0);
        let mc = |from: usize, to: usize| (from..=to).map(|k| 0.9f64.powi((k - from) as i32) * rewards[k]).sum::<f64>();
        for (t, end) in [(0, 2), (1, 2), (2, 2), (3, 4), (4, 4)] {
            assert!((a1[t] - (mc(t, end) - values[t])).abs() < 1e-9);
        }
    }

    #[test]
    fn clip_examples() {
        assert_relative_eq!(clipped_term(1.5, 1.0, 0.2), 1.2);
        assert_relative_eq!(clipped_term(0.5, -1.0, 0.2), -0.8);
        assert_relative_eq!(clipped_term(1.0, 0.7, 0.2), 0.7);
        for r in [0.1, 0.8, 1.0, 1.3, 3.0] {
            assert!(clipped_term(r, 1.0, 0.2) <= r * 1.0 + 1e-15);
        }
    }

    #[test]
    fn routing_reward_examples() {
        assert_relative_eq!(routing_reward(&[Some(1e6)]).unwrap(), 1.0 / 1.001);
        assert_relative_eq!(routing_reward(&[Some(0.0)]).unwrap(), 1000.0, epsilon = 1e-9);
        assert!(routing_reward(&[None]).is_none());
        let mut prev = 0.0;
        for d in [1e8, 1e7, 1e6, 1e3, 0.0] {
            let r = routing_reward(&[Some(d)]).unwrap();
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn ps_observation_scaling() {
        let g = LinkGeometry::single(1e6, 2e6);
        let o = ps_observe(300.0, 1.0, &g);
        assert_relative_eq!(o[0], 1.0);
        assert_eq!(o[1], 0.0);
        assert_eq!(o, ps_observe(300.0, 1.0, &g));
        assert_eq!(o.len(), PS_OBS_DIM);
    }

    fn grid_env() -> RoutingEnv {
        let c = Constellation::walker_star(3, 4, 500e3, 87f64.to_radians());
        let traffic = TrafficConfig {
            psi_max_s: f64::INFINITY,
            max_hops: 12,
            max_packets: 1,
            ..Default::default()
        };
        RoutingEnv::new(c, GeoConstants::default(), traffic, true)
    }

    #[test]
    fn routing_obs_layout() {
        let mut env = grid_env();
        let mut rng = stream(0, &[]);
        env.reset(&mut rng).unwrap();
        let obs = env.observe().routing.unwrap();
        assert_eq!(obs.features.len(), LANE_FEATURES);
        assert_eq!(obs.features[4], 1.0);
        let net = NetState::new(3);
        let o = routing_observe(env.topology().unwrap(), &net);
        assert!(o.features.iter().all(|&x| x == 0.0));
        assert_eq!(o.features.len(), 3 * LANE_FEATURES);
        // Entry satellite at plane 0, index 0 maps to the origin.
        let mut net = NetState::new(1);
        let topo = Topology::new(
            env.constellation.state(0, &env.consts),
            vec![GroundSite::beneath(env.constellation.state(0, &env.consts).positions[0]).position(&env.consts)],
            vec![GroundSite::beneath(env.constellation.state(0, &env.consts).positions[5]).position(&env.consts)],
            &[Some((0, 5))],
            12f64.to_radians(),
            &env.consts,
        );
        net.inject(&topo, &[0], 1.0);
        let o = routing_observe(&topo, &net);
        assert_eq!(&o.features[..2], &[0.0, 0.0]);
    }

    #[test]
    fn ratio_is_one_at_epoch_start() {
        let env = grid_env();
        let hyper = PpoHyper::default();
        let agents = Agents::for_env(&env, &hyper, 1);
        let mut rng = stream(5, &[]);
        let roll = collect(&mut env.clone(), &agents, &mut rng, 64).unwrap();
        let agent = agents.routing.as_ref().unwrap();
        for t in &roll.ro {
            let (lp, _) = agent.logprob(&t.obs, &t.action).unwrap();
            assert!(((lp - t.logprob).exp() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn policy_gradient_matches_fd_at_ratio_one() {
        // At θ = θ_old the clipped loss gradient is -A·∇logπ, so one actor
        // gradient coordinate can be checked against finite differences of
        // -Σ A·logπ/n.
        let env = grid_env();
        let hyper = PpoHyper { epochs: 1, minibatch: 1024, entropy_coef: 0.0, ..Default::default() };
        let agents = Agents::for_env(&env, &hyper, 3);
        let mut rng = stream(6, &[]);
        let roll = collect(&mut env.clone(), &agents, &mut rng, 32).unwrap();
        let agent = agents.routing.clone().unwrap();
        let adv: Vec<f64> = (0..roll.ro.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let n = roll.ro.len() as f64;
        let objective = |a: &Agent| -> f64 {
            roll.ro.iter().zip(&adv).map(|(t, &adv_i)| -adv_i * a.logprob(&t.obs, &t.action).unwrap().0 / n).sum()
        };
        let mut grad = vec![0.0; agent.actor.num_params()];
        for (t, &a) in roll.ro.iter().zip(&adv) {
            let cache = agent.actor.forward_cached(&t.obs.features).unwrap();
            let out = cache.output().to_vec();
            let AgentAction::Routing(acts) = &t.action else { unreachable!() };
            let m = t.obs.masks.as_ref().unwrap()[0].unwrap();
            let g = categorical_grad(&out[..5], &m, acts[0].unwrap(), -a / n, 0.0);
            agent.actor.backward_into(&cache, &g, &mut grad);
        }
        let i = grad.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
        let mut p = agent.clone();
        p.actor.params[i] += 1e-6;
        let mut m = agent.clone();
        m.actor.params[i] -= 1e-6;
        let fd = (objective(&p) - objective(&m)) / 2e-6;
        assert!((fd - grad[i]).abs() / fd.abs().max(1e-9) < 1e-4, "{fd} vs {}", grad[i]);
    }

    #[test]
    fn critic_learns_constant() {
        let hyper = PpoHyper { lr: 3e-3, ..Default::default() };
        let mut agent = Agent::new(AgentId::Phase, 5, 5, 2, &hyper, 0);
        let mut rng = stream(8, &[]);
        let xs: Vec<Vec<f64>> = (0..16).map(|_| (0..5).map(|_| rng.random::<f64>()).collect()).collect();
        let inputs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let targets = vec![0.7; 16];
        let mut loss = f64::INFINITY;
        for _ in 0..500 {
            loss = value_update(&mut agent, &inputs, &targets).unwrap();
            assert!(loss >= 0.0);
        }
        assert!(loss < 1e-4, "{loss}");
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let env = grid_env();
        let hyper = PpoHyper { lr: 0.0, ..Default::default() };
        let mut agents = Agents::for_env(&env, &hyper, 2);
        let before = agents.clone();
        let rep = train(&env, &mut agents, &hyper, &TrainConfig { total_steps: 600, workers: 1, seed: 4 }).unwrap();
        assert!(rep.iterations >= 2);
        assert_eq!(agents.routing.as_ref().unwrap().actor, before.routing.as_ref().unwrap().actor);
        assert_eq!(agents.routing.as_ref().unwrap().critic, before.routing.as_ref().unwrap().critic);
    }

    #[test]
    fn training_is_reproducible() {
        let env = grid_env();
        let hyper = PpoHyper::default();
        let cfg = TrainConfig { total_steps: 600, workers: 1, seed: 9 };
        let mut a = Agents::for_env(&env, &hyper, 2);
        let mut b = a.clone();
        let ra = train(&env, &mut a, &hyper, &cfg).unwrap();
        let rb = train(&env, &mut b, &hyper, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        let cfg2 = TrainConfig { workers: 2, ..cfg };
        let mut c = Agents::for_env(&env, &hyper, 2);
        let mut d = c.clone();
        assert_eq!(train(&env, &mut c, &hyper, &cfg2).unwrap(), train(&env, &mut d, &hyper, &cfg2).unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let env = grid_env();
        let hyper = PpoHyper::default();
        let a = Agents::for_env(&env, &hyper, 2);
        let mut buf = Vec::new();
        a.save(&mut buf).unwrap();
        let mut b = Agents::for_env(&env, &hyper, 77);
        b.load(&buf[..]).unwrap();
        assert_eq!(a.routing.unwrap().actor, b.routing.unwrap().actor);
    }

    #[test]
    fn squash_stays_in_range() {
        for z in [-50.0, -1.0, 0.0, 0.3, 50.0] {
            let p = squash_phase(0.0, z);
            assert!((0.0..2.0 * PI).contains(&p));
        }
        assert_relative_eq!(squash_phase(1.0 - PI, 0.0), 1.0);
    }
}

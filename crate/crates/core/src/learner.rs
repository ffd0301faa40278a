//! TD3 with a behavior-cloning term, trained on η-mixed batches of real and
//! imagined transitions, plus episode evaluation and normalized scores.
//!
//! States are standardized with the real dataset's statistics. The actor
//! ends in a scaled `tanh` so its actions always lie in the action box.
//! Training is single-threaded: actor and critic updates interleave.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, NetSpec};
use crate::cvae::ActionBounds;
use crate::data::{norm_stats, MixedSampler, NormStats};
use crate::env;
use crate::error::{ensure_dim, CabiError, Result};
use crate::nn::{Activation, AdamConfig, AdamState, DenseNet, Gradients};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub tau: f64,
    /// Target-policy noise std, as a fraction of the action half-range.
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: usize,
    /// BC trade-off: the Q term is scaled by `alpha / mean|Q|`.
    pub alpha: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub normalize_states: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            alpha: 2.5,
            steps: 100_000,
            batch_size: 256,
            eta: 0.7,
            hidden: vec![256, 256],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            normalize_states: true,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(CabiError::Config(format!("discount {} outside [0, 1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(CabiError::Config(format!("real-data ratio {} outside [0, 1]", self.eta)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(CabiError::Config(format!("target rate {} outside [0, 1]", self.tau)));
        }
        if self.batch_size == 0 || self.policy_delay == 0 {
            return Err(CabiError::Config("batch size and policy delay must be positive".into()));
        }
        Ok(())
    }
}

/// Anything that maps a state to an action.
pub trait Policy: Sync {
    fn act(&self, state: &[f64]) -> Vec<f64>;
}

/// Wraps a closure as a [`Policy`].
pub struct FnPolicy<F>(pub F);

impl<F: Fn(&[f64]) -> Vec<f64> + Sync> Policy for FnPolicy<F> {
    fn act(&self, state: &[f64]) -> Vec<f64> {
        (self.0)(state)
    }
}

/// Deterministic squashed actor.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub net: DenseNet,
    pub bounds: ActionBounds,
    pub state_stats: NormStats,
}

impl Actor {
    fn squash(&self, raw: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(raw.raw_dim(), |(i, d)| self.bounds.squash(d, raw[[i, d]].tanh()))
    }

    fn norm_states(&self, states: ArrayView2<f64>) -> Array2<f64> {
        let mut x = states.to_owned();
        self.state_stats.normalize_cols(&mut x, 0);
        x
    }

    pub fn act_batch(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        let raw = self.net.forward_batch(self.norm_states(states).view())?;
        Ok(self.squash(&raw))
    }
}

impl Policy for Actor {
    fn act(&self, state: &[f64]) -> Vec<f64> {
        let x = ArrayView2::from_shape((1, state.len()), state).expect("one row");
        self.act_batch(x).expect("actor input width").row(0).to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub config: LearnerConfig,
    pub bounds: ActionBounds,
    pub state_stats: NormStats,
    pub seed: u64,
    #[serde(default)]
    pub manifest: BTreeMap<String, String>,
    pub nets: Vec<NetSpec>,
}

/// Trained actor and twin critics.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyArtifact {
    pub actor: Actor,
    pub critics: [DenseNet; 2],
    pub config: LearnerConfig,
    pub seed: u64,
    pub manifest: BTreeMap<String, String>,
}

impl PolicyArtifact {
    pub fn meta(&self) -> PolicyMeta {
        PolicyMeta {
            config: self.config.clone(),
            bounds: self.actor.bounds.clone(),
            state_stats: self.actor.state_stats.clone(),
            seed: self.seed,
            manifest: self.manifest.clone(),
            nets: vec![
                NetSpec::of(&self.actor.net),
                NetSpec::of(&self.critics[0]),
                NetSpec::of(&self.critics[1]),
            ],
        }
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let blob = checkpoint::pack(&[&self.actor.net, &self.critics[0], &self.critics[1]]);
        checkpoint::save(base, &self.meta(), &blob)
    }

    pub fn load(base: &Path) -> Result<Self> {
        let (meta, blob): (PolicyMeta, Vec<f64>) = checkpoint::load(base)?;
        let nets = checkpoint::unpack(&meta.nets, &blob)?;
        let [actor, c1, c2]: [DenseNet; 3] = nets
            .try_into()
            .map_err(|_| CabiError::InvalidArgument("policy checkpoint needs three networks".into()))?;
        Ok(Self {
            actor: Actor {
                net: actor,
                bounds: meta.bounds,
                state_stats: meta.state_stats,
            },
            critics: [c1, c2],
            config: meta.config,
            seed: meta.seed,
            manifest: meta.manifest,
        })
    }

    /// Q-values of both critics for raw states and actions.
    pub fn q_values(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<[Array1<f64>; 2]> {
        let x = critic_input(&self.actor.norm_states(states), actions)?;
        let q1 = self.critics[0].forward_batch(x.view())?.column(0).to_owned();
        let q2 = self.critics[1].forward_batch(x.view())?.column(0).to_owned();
        Ok([q1, q2])
    }
}

impl Policy for PolicyArtifact {
    fn act(&self, state: &[f64]) -> Vec<f64> {
        self.actor.act(state)
    }
}

/// Per-step losses; `actor_losses` only has entries on delayed steps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub critic_losses: Vec<f64>,
    pub actor_losses: Vec<f64>,
}

fn critic_input(norm_states: &Array2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
    ensure_dim(norm_states.nrows(), actions.nrows())?;
    concatenate(Axis(1), &[norm_states.view(), actions]).map_err(|e| CabiError::InvalidArgument(e.to_string()))
}

fn diverged(what: &str, step: usize) -> CabiError {
    CabiError::Diverged {
        what: what.to_string(),
        step,
    }
}

/// Mean squared TD error of `critic` on inputs `x` against targets `y`.
pub fn critic_loss_and_grad(critic: &DenseNet, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<(f64, Gradients)> {
    ensure_dim(x.nrows(), y.len())?;
    let n = x.nrows().max(1) as f64;
    let cache = critic.forward_train(x)?;
    let q = cache.output();
    let mut loss = 0.0;
    let mut d = Array2::zeros((x.nrows(), 1));
    for i in 0..x.nrows() {
        let e = q[[i, 0]] - y[i];
        loss += e * e / n;
        d[[i, 0]] = 2.0 * e / n;
    }
    let (grads, _) = critic.backward(&cache, d.view());
    Ok((loss, grads))
}

/// Scale on the Q term of the actor objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActorWeight {
    /// `alpha / mean|Q|`, treated as a constant when differentiating.
    Adaptive(f64),
    Fixed(f64),
}

/// Actor objective `-λ·mean Q(s, π(s)) + mean (π(s) - a)²` on normalized
/// states and its gradient with respect to the actor parameters.
pub fn actor_loss_and_grad(
    actor: &Actor,
    critic: &DenseNet,
    norm_states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    weight: ActorWeight,
) -> Result<(f64, Gradients)> {
    let (n, ad) = (norm_states.nrows(), actor.bounds.dim());
    ensure_dim(n, actions.nrows())?;
    ensure_dim(ad, actions.ncols())?;
    let cache = actor.net.forward_train(norm_states)?;
    let raw = cache.output();
    let pi = actor.squash(raw);
    let xp = concatenate(Axis(1), &[norm_states, pi.view()]).map_err(|e| CabiError::InvalidArgument(e.to_string()))?;
    let ccache = critic.forward_train(xp.view())?;
    let q = ccache.output().column(0).to_owned();
    let lambda = match weight {
        ActorWeight::Adaptive(alpha) => alpha / (q.mapv(f64::abs).mean().unwrap_or(0.0) + 1e-12),
        ActorWeight::Fixed(l) => l,
    };
    let diff = &pi - &actions;
    let bc = diff.mapv(|v| v * v).mean().unwrap_or(0.0);
    let loss = -lambda * q.mean().unwrap_or(0.0) + bc;

    let dq = Array2::from_elem((n, 1), -lambda / n.max(1) as f64);
    let (_, d_in) = critic.backward(&ccache, dq.view());
    let mut d_a = d_in.slice(s![.., norm_states.ncols()..]).to_owned();
    let scale = 2.0 / (n * ad).max(1) as f64;
    d_a.zip_mut_with(&diff, |g, df| *g += scale * df);
    // through a = c + h·tanh(raw)
    for i in 0..n {
        for d in 0..ad {
            let t = raw[[i, d]].tanh();
            d_a[[i, d]] *= actor.bounds.half(d) * (1.0 - t * t);
        }
    }
    let (grads, _) = actor.net.backward(&cache, d_a.view());
    Ok((loss, grads))
}

/// Trains an actor and twin critics on batches drawn from `sampler`.
pub fn train_policy(
    sampler: &MixedSampler<'_>,
    bounds: &ActionBounds,
    config: &LearnerConfig,
    rng: &mut SeededRng,
) -> Result<(PolicyArtifact, TrainReport)> {
    config.validate()?;
    let real = sampler.real();
    if real.is_empty() {
        return Err(CabiError::InvalidArgument("policy training needs real transitions".into()));
    }
    ensure_dim(real.action_dim(), bounds.dim())?;
    let sd = real.state_dim();
    let ad = real.action_dim();
    let state_stats = if config.normalize_states {
        norm_stats(real)?.state
    } else {
        NormStats::identity(sd)
    };
    let seed = rng.seed();

    let mut actor = Actor {
        net: DenseNet::new(sd, &config.hidden, ad, Activation::Relu, rng),
        bounds: bounds.clone(),
        state_stats,
    };
    let mut critics = [
        DenseNet::new(sd + ad, &config.hidden, 1, Activation::Relu, rng),
        DenseNet::new(sd + ad, &config.hidden, 1, Activation::Relu, rng),
    ];
    let mut actor_target = actor.clone();
    let mut critic_targets = critics.clone();
    let mut actor_opt = AdamState::for_net(&actor.net, AdamConfig::with_lr(config.actor_lr));
    let mut critic_opts = [
        AdamState::for_net(&critics[0], AdamConfig::with_lr(config.critic_lr)),
        AdamState::for_net(&critics[1], AdamConfig::with_lr(config.critic_lr)),
    ];
    let half = Array1::from_iter((0..ad).map(|d| bounds.half(d)));
    let mut report = TrainReport {
        critic_losses: Vec::with_capacity(config.steps),
        actor_losses: Vec::with_capacity(config.steps / config.policy_delay + 1),
    };

    for step in 0..config.steps {
        let batch = sampler.mixed_batch(config.batch_size, rng)?;
        let n = batch.len();
        let s = actor.norm_states(batch.states.view());
        let s2 = actor.norm_states(batch.next_states.view());

        // target with clipped smoothing noise
        let raw_next = actor_target.net.forward_batch(s2.view())?;
        let mut a2 = actor_target.squash(&raw_next);
        for i in 0..n {
            for d in 0..ad {
                let eps = (rng.normal() * config.policy_noise).clamp(-config.noise_clip, config.noise_clip) * half[d];
                a2[[i, d]] = (a2[[i, d]] + eps).clamp(bounds.low[d], bounds.high[d]);
            }
        }
        let x2 = critic_input(&s2, a2.view())?;
        let q1t = critic_targets[0].forward_batch(x2.view())?;
        let q2t = critic_targets[1].forward_batch(x2.view())?;
        let y = Array1::from_iter(
            (0..n).map(|i| batch.rewards[i] + config.gamma * (1.0 - batch.dones[i]) * q1t[[i, 0]].min(q2t[[i, 0]])),
        );

        let x = critic_input(&s, batch.actions.view())?;
        let mut critic_loss = 0.0;
        for c in 0..2 {
            let (loss, grads) = critic_loss_and_grad(&critics[c], x.view(), y.view())?;
            critic_loss += loss;
            if !grads.is_finite() {
                return Err(diverged("critic", step));
            }
            critic_opts[c].step(&mut critics[c], &grads)?;
        }
        if !critic_loss.is_finite() {
            return Err(diverged("critic", step));
        }
        report.critic_losses.push(critic_loss);

        if (step + 1) % config.policy_delay == 0 {
            let (actor_loss, grads) =
                actor_loss_and_grad(&actor, &critics[0], s.view(), batch.actions.view(), ActorWeight::Adaptive(config.alpha))?;
            if !actor_loss.is_finite() {
                return Err(diverged("actor", step));
            }
            report.actor_losses.push(actor_loss);
            if !grads.is_finite() {
                return Err(diverged("actor", step));
            }
            actor_opt.step(&mut actor.net, &grads)?;

            actor_target.net.soft_update_from(&actor.net, config.tau);
            for c in 0..2 {
                critic_targets[c].soft_update_from(&critics[c], config.tau);
            }
        }
    }

    Ok((
        PolicyArtifact {
            actor,
            critics,
            config: config.clone(),
            seed,
            manifest: BTreeMap::new(),
        },
        report,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

/// Undiscounted return of one RiskWorld episode under `policy`.
pub fn run_episode(policy: &dyn Policy, rng: &mut SeededRng) -> f64 {
    let mut state = env::reset(rng);
    let mut total = 0.0;
    for _ in 0..env::EPISODE_LEN {
        let a = policy.act(&state.to_vec());
        let res = env::step(state, [a[0], a[1]]);
        total += res.reward;
        if res.done {
            break;
        }
        state = res.next;
    }
    total
}

/// Mean and (population) std of RiskWorld returns over `episodes` runs.
pub fn evaluate(policy: &dyn Policy, episodes: usize, rng: &mut SeededRng) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(CabiError::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let returns: Vec<f64> = (0..episodes).map(|_| run_episode(policy, rng)).collect();
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let std = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / episodes as f64).sqrt();
    Ok(EvalStats { mean, std, returns })
}

/// `(c − c_r) / (c_e − c_r) · 100`.
pub fn normalized_score(c: f64, c_r: f64, c_e: f64) -> Result<f64> {
    if c_e == c_r {
        return Err(CabiError::InvalidArgument("reference scores must differ".into()));
    }
    Ok((c - c_r) / (c_e - c_r) * 100.0)
}

/// Scripted policy that skirts the danger zone: east along the bottom edge,
/// then north into the goal.
pub fn goal_seeking_policy() -> FnPolicy<impl Fn(&[f64]) -> Vec<f64> + Sync> {
    FnPolicy(|s: &[f64]| {
        let b = env::ACTION_BOUND;
        if s[0] < 1.2 {
            vec![b.min(1.2 - s[0]), 0.0]
        } else {
            vec![0.0, b.min(1.2 - s[1]).max(-b)]
        }
    })
}
